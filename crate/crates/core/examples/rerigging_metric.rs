//! Scores rasterized skeletons against themselves and against displaced and
//! unrelated skeletons with the rerigging score.

use skadapter::data::{make_dataset, rasterize_capsules, DataConfig};
use skadapter::metrics::{extract_skeleton_points, occupancy_iou, rerigging_score};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = DataConfig::default();
    let samples = make_dataset(3, 8, &data)?;
    let spacing = 1.0 / data.res as f64;
    for (i, s) in samples.iter().enumerate() {
        let other = &samples[(i + 1) % samples.len()];
        let shifted = s.skeleton.translated_unchecked([0.125, 0.0, 0.0]);
        let raster = rasterize_capsules(&s.skeleton, data.res, data.radius)?;
        println!(
            "{i}: {:<9} voxels={:<4} thinned={:<3} self={:.4} shifted={:.4} other={:.4} iou_other={:.3}",
            s.family().unwrap().name(),
            raster.count(),
            extract_skeleton_points(&raster)?.len(),
            rerigging_score(&raster, &s.skeleton, spacing)?,
            rerigging_score(&raster, &shifted, spacing)?,
            rerigging_score(&raster, &other.skeleton, spacing)?,
            occupancy_iou(&raster, &other.occupancy)?,
        );
    }
    Ok(())
}
