//! Attaches a fresh encoder and zero-initialized adapters to a briefly
//! pretrained backbone, checks the null signal, trains the adapter and
//! compares validation loss with and without the skeleton tokens.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use skadapter::adapter::{CompositeModel, SkeletonInput};
use skadapter::data::{make_dataset, DataConfig};
use skadapter::flow::{gaussian_latent, TrainConfig, ZeroedSkeleton};
use skadapter::nn::ModelConfig;
use skadapter::train::{fresh_backbone, items_from_samples, train, validation_loss, Stage};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ModelConfig {
        feature_dim: 32,
        n_blocks: 2,
        ..ModelConfig::default()
    };
    let data = DataConfig::default();
    let items = items_from_samples(&make_dataset(1, 48, &data)?, &cfg);
    let held = items_from_samples(&make_dataset(2, 8, &data)?, &cfg);

    let mut backbone = fresh_backbone::<f32>(&cfg, 0)?;
    let pre = TrainConfig { epochs: 3, lr: 1e-3, ..TrainConfig::default() };
    train(&mut backbone, &items, &[], Stage::Pretrain, &pre, |_, _, _| {})?;

    let mut model = CompositeModel::fresh(&cfg, backbone.params, &mut ChaCha8Rng::seed_from_u64(3))?;
    let z = gaussian_latent(&mut ChaCha8Rng::seed_from_u64(4), cfg.latent_res, cfg.latent_channels);
    let bare = model.velocity(&z, 0.5, Some(items[0].label), SkeletonInput::Absent)?;
    let hooked = model.velocity(&z, 0.5, Some(items[0].label), SkeletonInput::Encoded(&items[0].skeleton))?;
    println!("null signal at init: outputs identical = {}", bare.values() == hooked.values());

    let frozen = model.backbone_hash();
    let at = TrainConfig { epochs: 4, lr: 1e-3, seed: 2, ..TrainConfig::default() };
    let log = train(&mut model, &items, &held, Stage::Adapter, &at, |e, loss, val| {
        println!("epoch {e} train {loss:.4} val {:.4}", val.unwrap_or(f64::NAN));
    })?;
    println!("steps={} backbone unchanged = {}", log.steps, model.backbone_hash() == frozen);

    let zeroed = ZeroedSkeleton(&model);
    let mut zero_loss = 0.0;
    for (i, item) in held.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(at.seed ^ 0x7a1d);
        rng.set_stream(i as u64);
        let cfg = TrainConfig { text_dropout_p: 0.0, ..at.clone() };
        let batch = [skadapter::flow::FlowItem { z0: &item.latent, skeleton: Some(&item.skeleton), label: Some(item.label) }];
        zero_loss += skadapter::flow::fm_loss(&zeroed, &batch, &mut rng, &cfg, &mut Default::default())?;
    }
    println!(
        "held-out loss: skeleton {:.4}, zeroed tokens {:.4}",
        validation_loss(&model, &held, Stage::Adapter, &at)?,
        zero_loss / held.len() as f64
    );
    Ok(())
}
