//! Pretrains a small label-conditioned backbone for a few epochs, saves it
//! and reloads the checkpoint.

use skadapter::data::{make_dataset, DataConfig};
use skadapter::flow::TrainConfig;
use skadapter::nn::{checkpoint, ModelConfig, ParamStore};
use skadapter::train::{fresh_backbone, items_from_samples, train, Stage};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ModelConfig {
        feature_dim: 32,
        n_blocks: 2,
        ..ModelConfig::default()
    };
    let samples = make_dataset(1, 48, &DataConfig::default())?;
    let items = items_from_samples(&samples, &cfg);
    let mut model = fresh_backbone::<f32>(&cfg, 0)?;
    let tcfg = TrainConfig {
        epochs: 4,
        lr: 1e-3,
        ..TrainConfig::default()
    };
    let log = train(&mut model, &items, &[], Stage::Pretrain, &tcfg, |e, loss, _| {
        println!("epoch {e} loss {loss:.4}");
    })?;
    println!("steps={} label drops={}/{}", log.steps, log.dropout.label_dropped, log.dropout.items);

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("backbone.ckpt");
    checkpoint::save(&path, &cfg.to_text(), &model.params)?;
    let (text, back): (String, ParamStore<f32>) = checkpoint::load(&path)?;
    println!(
        "checkpoint {} bytes, config keys {}, hash equal {}",
        std::fs::metadata(&path)?.len(),
        text.lines().count(),
        back.content_hash("") == model.params.content_hash("")
    );
    Ok(())
}
