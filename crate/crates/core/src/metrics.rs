//! Structural-alignment metrics: Chamfer distance, occupancy IoU, bone
//! sampling, thinning-based skeleton extraction and the rerigging score.

use thiserror::Error;

use crate::backbone::OccupancyGrid;
use crate::skeleton::Skeleton;

pub type Point = [f64; 3];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("point set is empty")]
    EmptySet,
    #[error("occupancy grid is empty")]
    EmptyOccupancy,
    #[error("grid sides differ: {0} vs {1}")]
    ResolutionMismatch(usize, usize),
    #[error("spacing {0} must be positive")]
    InvalidSpacing(f64),
}

pub fn distance(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn mean_nearest(from: &[Point], to: &[Point]) -> f64 {
    from.iter()
        .map(|a| to.iter().map(|b| distance(*a, *b)).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / from.len() as f64
}

/// Sum of the two directed mean nearest-neighbour distances (not squared).
pub fn chamfer(a: &[Point], b: &[Point]) -> Result<f64, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::EmptySet);
    }
    Ok(mean_nearest(a, b) + mean_nearest(b, a))
}

/// `|a ∧ b| / |a ∨ b|`, 1 when both grids are empty.
pub fn occupancy_iou(a: &OccupancyGrid, b: &OccupancyGrid) -> Result<f64, MetricError> {
    if a.res() != b.res() {
        return Err(MetricError::ResolutionMismatch(a.res(), b.res()));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.bits().iter().zip(b.bits()) {
        inter += (*x && *y) as usize;
        union += (*x || *y) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Every joint once, plus evenly spaced interior points on each bone so that
/// consecutive points are at most `spacing` apart (up to the `f32` rounding
/// of joint coordinates).
pub fn sample_bone_points(skel: &Skeleton, spacing: f64) -> Result<Vec<Point>, MetricError> {
    if !(spacing > 0.0) || !spacing.is_finite() {
        return Err(MetricError::InvalidSpacing(spacing));
    }
    let joint = |i: usize| skel.joints()[i].map(|c| c as f64);
    let mut out: Vec<Point> = (0..skel.len()).map(joint).collect();
    for c in 0..skel.len() {
        let Some(p) = skel.parent(c) else { continue };
        let (a, b) = (joint(p), joint(c));
        let segments = ((distance(a, b) / spacing) - 1e-6).ceil().max(1.0) as usize;
        for k in 1..segments {
            let s = k as f64 / segments as f64;
            out.push([a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1]), a[2] + s * (b[2] - a[2])]);
        }
    }
    Ok(out)
}

/// 3x3x3 neighbourhood of a voxel, index `(dx+1)*9 + (dy+1)*3 + (dz+1)`,
/// out-of-grid cells counted as background.
fn neighbourhood(occ: &[bool], res: usize, x: usize, y: usize, z: usize) -> [bool; 27] {
    let mut n = [false; 27];
    for (i, cell) in n.iter_mut().enumerate() {
        let (dx, dy, dz) = ((i / 9) as isize - 1, ((i / 3) % 3) as isize - 1, (i % 3) as isize - 1);
        let (nx, ny, nz) = (x as isize + dx, y as isize + dy, z as isize + dz);
        let inside = |c: isize| c >= 0 && c < res as isize;
        if inside(nx) && inside(ny) && inside(nz) {
            *cell = occ[(nx as usize * res + ny as usize) * res + nz as usize];
        }
    }
    n
}

fn offset(i: usize) -> [isize; 3] {
    [(i / 9) as isize - 1, ((i / 3) % 3) as isize - 1, (i % 3) as isize - 1]
}

fn manhattan(i: usize) -> usize {
    offset(i).iter().map(|c| c.unsigned_abs()).sum()
}

/// Components of `members` (cells of the 3x3x3 cube) under the adjacency
/// given by `max_manhattan` (1 = 6-adjacency, 3 = 26-adjacency).
fn components(members: &[bool; 27], max_manhattan: usize) -> Vec<Vec<usize>> {
    let mut seen = [false; 27];
    let mut out = Vec::new();
    for start in 0..27 {
        if !members[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut comp = Vec::new();
        while let Some(c) = stack.pop() {
            comp.push(c);
            let oc = offset(c);
            for n in 0..27 {
                if !members[n] || seen[n] {
                    continue;
                }
                let on = offset(n);
                let d: Vec<usize> = (0..3).map(|a| (oc[a] - on[a]).unsigned_abs()).collect();
                if d.iter().all(|v| *v <= 1) && d.iter().sum::<usize>() <= max_manhattan {
                    seen[n] = true;
                    stack.push(n);
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Simple-point test for (26, 6) digital topology: exactly one 26-component
/// of object voxels in the punctured neighbourhood, and exactly one
/// 6-component of background voxels in the 18-neighbourhood that touches
/// the center face-wise.
fn is_simple(n: &[bool; 27]) -> bool {
    let mut obj = *n;
    obj[13] = false;
    if components(&obj, 3).len() != 1 {
        return false;
    }
    let mut bg = [false; 27];
    for i in 0..27 {
        bg[i] = i != 13 && !n[i] && manhattan(i) <= 2;
    }
    let face_touching = components(&bg, 1)
        .into_iter()
        .filter(|c| c.iter().any(|i| manhattan(*i) == 1))
        .count();
    face_touching == 1
}

/// Face directions in sub-iteration order: +z, -z, +y, -y, +x, -x.
const DIRECTIONS: [usize; 6] = [14, 12, 16, 10, 22, 4];

/// Iterative directional thinning: in each of six sub-iterations, border
/// voxels open in that direction are removed in scan order if they are
/// simple and not end points (fewer than two object neighbours).
pub fn thin(occ: &OccupancyGrid) -> OccupancyGrid {
    let res = occ.res();
    let mut bits = occ.bits().to_vec();
    loop {
        let mut changed = false;
        for dir in DIRECTIONS {
            for idx in 0..bits.len() {
                if !bits[idx] {
                    continue;
                }
                let (x, y, z) = (idx / (res * res), (idx / res) % res, idx % res);
                let n = neighbourhood(&bits, res, x, y, z);
                if n[dir] {
                    continue;
                }
                let neighbours = n.iter().enumerate().filter(|(i, v)| *i != 13 && **v).count();
                if neighbours < 2 || !is_simple(&n) {
                    continue;
                }
                bits[idx] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    OccupancyGrid::from_bits(res, bits).expect("same side as the input")
}

/// Normalized centers of the voxels that survive thinning.
pub fn extract_skeleton_points(occ: &OccupancyGrid) -> Result<Vec<Point>, MetricError> {
    if occ.is_empty() {
        return Err(MetricError::EmptyOccupancy);
    }
    Ok(thin(occ).occupied_centers())
}

/// Chamfer distance between the thinned generation and bone samples of the
/// conditioning skeleton.
pub fn rerigging_score(gen: &OccupancyGrid, cond: &Skeleton, spacing: f64) -> Result<f64, MetricError> {
    let extracted = extract_skeleton_points(gen)?;
    let bones = sample_bone_points(cond, spacing)?;
    chamfer(&extracted, &bones)
}

/// Score assigned to generations that cannot be scored (empty grids): the
/// diameter of the normalized cube, twice (one per Chamfer direction).
pub const WORST_RERIGGING: f64 = 2.0 * 1.732_050_807_568_877_2;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chamfer_examples() {
        assert_eq!(chamfer(&[[0.0; 3]], &[[1.0, 0.0, 0.0]]).unwrap(), 2.0);
        let x = [[0.1, 0.2, 0.3], [0.0, -0.4, 0.2]];
        assert_eq!(chamfer(&x, &x).unwrap(), 0.0);
        assert_eq!(chamfer(&[], &x), Err(MetricError::EmptySet));
    }

    #[test]
    fn iou_examples() {
        let a = OccupancyGrid::from_fn(4, |x, _, _| x < 1).unwrap();
        let b = OccupancyGrid::from_fn(4, |x, _, _| x < 2).unwrap();
        assert_eq!(occupancy_iou(&a, &b).unwrap(), 0.5);
        let e = OccupancyGrid::empty(4).unwrap();
        assert_eq!(occupancy_iou(&e, &e).unwrap(), 1.0);
    }

    #[test]
    fn bone_point_counts() {
        let s = Skeleton::new(vec![[0.0, 0.0, 0.0], [0.3, 0.0, 0.0]], &[-1, 0]).unwrap();
        assert_eq!(sample_bone_points(&s, 0.1).unwrap().len(), 4);
        let one = Skeleton::new(vec![[0.1, 0.1, 0.1]], &[-1]).unwrap();
        assert_eq!(sample_bone_points(&one, 0.1).unwrap().len(), 1);
    }

    #[test]
    fn single_voxel_survives() {
        let mut g = OccupancyGrid::empty(8).unwrap();
        g.set(3, 4, 5, true);
        assert_eq!(extract_skeleton_points(&g).unwrap(), g.occupied_centers());
    }

    #[test]
    fn solid_block_thins_to_connected_core() {
        let g = OccupancyGrid::from_fn(8, |x, y, z| (2..6).contains(&x) && (2..6).contains(&y) && (2..6).contains(&z)).unwrap();
        let t = thin(&g);
        assert!(t.count() >= 1 && t.count() < g.count());
    }
}
