//! Pools synthetic occupancy into the latent grid and decodes it back.
//!
//! Prints the raw pooled statistics the latent normalization is built on and
//! the round-trip IoU over a freshly generated dataset.

use skadapter::backbone::{decode_latent, encode_occupancy, OCC_SCALE, OCC_SHIFT, DEFAULT_THRESHOLD};
use skadapter::data::{make_dataset, DataConfig};
use skadapter::metrics::occupancy_iou;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let samples = make_dataset(1, 256, &DataConfig::default())?;
    let mut pooled = Vec::new();
    let thresholds = [0.125, 0.25, 0.375, DEFAULT_THRESHOLD];
    let mut iou = [0.0; 4];
    for s in &samples {
        let z = encode_occupancy(&s.occupancy, 4);
        pooled.extend(z.values().chunks(4).map(|c| c[0] * OCC_SCALE + OCC_SHIFT));
        for (acc, th) in iou.iter_mut().zip(thresholds) {
            *acc += occupancy_iou(&decode_latent(&z, th), &s.occupancy)?;
        }
    }
    let n = pooled.len() as f64;
    let mean = pooled.iter().sum::<f64>() / n;
    let std = (pooled.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n).sqrt();
    println!("pooled_mean={mean:.4} pooled_std={std:.4}");
    for (acc, th) in iou.iter().zip(thresholds) {
        println!("threshold={th} round_trip_iou={:.4}", acc / samples.len() as f64);
    }
    Ok(())
}
