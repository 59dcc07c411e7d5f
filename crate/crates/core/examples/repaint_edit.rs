//! Regenerates one box of a latent under a different skeleton while the rest
//! of the grid stays bit-identical.

use skadapter::data::{make_dataset, DataConfig};
use skadapter::flow::{repaint_sample, sample, FlowSampleConfig, LatentBox};
use skadapter::nn::ModelConfig;
use skadapter::train::{fresh_backbone, items_from_samples};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ModelConfig {
        feature_dim: 32,
        n_blocks: 2,
        ..ModelConfig::default()
    };
    let model = fresh_backbone::<f32>(&cfg, 0)?;
    let samples = make_dataset(5, 2, &DataConfig::default())?;
    let items = items_from_samples(&samples, &cfg);
    let original = &items[0].latent;

    let mask = LatentBox { min: [0, 0, 0], max: [4, 8, 8] };
    let sc = FlowSampleConfig { steps: 20, seed: 1, mask: Some(mask), resample_u: 2, ..Default::default() };
    let edited = repaint_sample(&model, original, None, Some(items[1].label), &sc)?;
    let editable = mask.token_mask(cfg.latent_res);
    let ch = cfg.latent_channels;
    let (mut kept, mut changed) = (0, 0);
    for (tok, inside) in editable.iter().enumerate() {
        let r = tok * ch..(tok + 1) * ch;
        if *inside {
            changed += usize::from(edited.latent.values()[r.clone()] != original.values()[r]);
        } else {
            kept += usize::from(edited.latent.values()[r.clone()] == original.values()[r]);
        }
    }
    let outside = editable.iter().filter(|e| !**e).count();
    println!("outside tokens kept bit-exact: {kept}/{outside}, inside tokens changed: {changed}");

    let full = FlowSampleConfig { mask: None, resample_u: 1, ..sc.clone() };
    let a = repaint_sample(&model, original, None, Some(0), &full)?;
    let b = sample(&model, None, Some(0), &full, cfg.latent_res, ch)?;
    println!("full-mask edit equals plain sampling: {}", a.latent.values() == b.latent.values());
    let empty = FlowSampleConfig { mask: Some(LatentBox { min: [0; 3], max: [0; 3] }), ..full };
    let c = repaint_sample(&model, original, None, Some(0), &empty)?;
    println!("empty-mask edit is the identity: {}", c.latent.values() == original.values());
    Ok(())
}
