//! Generates a synthetic capsule dataset, writes it, reads it back and prints
//! per-family statistics plus an ASCII slice of the first sample.

use skadapter::data::{family_histogram, load_dataset, make_dataset, mean_occupancy_fraction, save_dataset, DataConfig};
use skadapter::skeleton::Family;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = DataConfig::default();
    let samples = make_dataset(11, 64, &cfg)?;
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("demo.tms");
    save_dataset(&path, &cfg, &samples)?;
    let (header, back) = load_dataset(&path)?;
    println!(
        "wrote {} samples ({} bytes), res={} radius={} round_trip_equal={}",
        header.n_samples,
        std::fs::metadata(&path)?.len(),
        header.res,
        header.radius,
        back == samples
    );
    for (fam, count) in Family::ALL.iter().zip(family_histogram(&samples)) {
        println!("{:<10} {count}", fam.name());
    }
    println!("mean occupied fraction {:.4}", mean_occupancy_fraction(&samples));

    let first = &samples[0];
    let res = first.occupancy.res();
    let z = (0..res)
        .max_by_key(|&z| (0..res * res).filter(|i| first.occupancy.get(i / res, i % res, z)).count())
        .unwrap();
    println!("{} with {} joints, slice z={z}:", first.family().unwrap(), first.skeleton.len());
    for y in (0..res).rev() {
        let row: String = (0..res).map(|x| if first.occupancy.get(x, y, z) { '#' } else { '.' }).collect();
        println!("  {row}");
    }
    Ok(())
}
