//! Synthetic (skeleton, occupancy, label) triples and the `TMS1` container.
//!
//! Each sample draws a family uniformly, a joint count uniformly in the
//! configured range, a random tree of that family, and rasterizes it as
//! capsules: a voxel is occupied when its center lies within `radius` voxels
//! of some bone segment.
//!
//! File layout (little-endian): magic `TMS1`, version `u16`, sample count
//! `u32`, grid side `u16`, max joints `u16`, radius `f32`; then per sample a
//! `u16` label, `u16` joint count, joints as `f32` triples, parents as `i16`
//! (`-1` for the root) and the occupancy bits packed LSB-first.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::backbone::{GridError, OccupancyGrid};
use crate::skeleton::{sample_tree_with, Family, Skeleton, SkeletonError, MAX_SAMPLED_JOINTS, MIN_SAMPLED_JOINTS};

pub const MAGIC: &[u8; 4] = b"TMS1";
pub const VERSION: u16 = 1;
pub const DEFAULT_RES: usize = 16;
pub const DEFAULT_RADIUS: f32 = 1.5;
pub const MAX_RETRIES: usize = 100;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("not a dataset file (bad magic)")]
    BadMagic,
    #[error("dataset version {0} is not supported")]
    VersionMismatch(u16),
    #[error("sample {index}: {reason}")]
    CorruptSample { index: usize, reason: String },
    #[error("capsule radius {0} must be positive and finite")]
    InvalidRadius(f32),
    #[error("sample {0} stayed empty after {MAX_RETRIES} draws")]
    EmptyOccupancy(usize),
    #[error("invalid dataset config: {0}")]
    Config(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error("{path}: {source}")]
    File { path: String, source: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Squared distance from `p` to the segment `a..b`.
pub fn segment_distance_sq(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let ap = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
    let dd = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
    let s = if dd > 0.0 {
        ((ap[0] * d[0] + ap[1] * d[1] + ap[2] * d[2]) / dd).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [ap[0] - s * d[0], ap[1] - s * d[1], ap[2] - s * d[2]];
    q[0] * q[0] + q[1] * q[1] + q[2] * q[2]
}

/// Joint position in voxel units (voxel `i` has its center at `i + 0.5`).
pub fn to_voxel_space(p: [f32; 3], res: usize) -> [f64; 3] {
    p.map(|c| (c as f64 + 0.5) * res as f64)
}

/// Capsule rasterization of the skeleton's bones (a single joint is a sphere).
pub fn rasterize_capsules(skel: &Skeleton, res: usize, radius: f32) -> Result<OccupancyGrid, DataError> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(DataError::InvalidRadius(radius));
    }
    let mut occ = OccupancyGrid::empty(res)?;
    let r = radius as f64;
    let segments: Vec<([f64; 3], [f64; 3])> = if skel.len() == 1 {
        let p = to_voxel_space(skel.joints()[0], res);
        vec![(p, p)]
    } else {
        (0..skel.len())
            .filter_map(|i| skel.parent(i).map(|p| (p, i)))
            .map(|(p, c)| (to_voxel_space(skel.joints()[p], res), to_voxel_space(skel.joints()[c], res)))
            .collect()
    };
    for (a, b) in segments {
        let lo = |ax: usize| ((a[ax].min(b[ax]) - r - 0.5).floor().max(0.0)) as usize;
        let hi = |ax: usize| ((a[ax].max(b[ax]) + r - 0.5).ceil().min(res as f64 - 1.0)).max(-1.0) as isize;
        for x in lo(0) as isize..=hi(0) {
            for y in lo(1) as isize..=hi(1) {
                for z in lo(2) as isize..=hi(2) {
                    let (x, y, z) = (x as usize, y as usize, z as usize);
                    let p = [x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5];
                    if segment_distance_sq(p, a, b) <= r * r {
                        occ.set(x, y, z, true);
                    }
                }
            }
        }
    }
    Ok(occ)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSample {
    pub skeleton: Skeleton,
    pub occupancy: OccupancyGrid,
    pub label: usize,
}

impl DatasetSample {
    pub fn family(&self) -> Option<Family> {
        Family::from_label(self.label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetHeader {
    pub version: u16,
    pub n_samples: usize,
    pub res: usize,
    pub max_joints: usize,
    pub radius: f32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataConfig {
    pub res: usize,
    pub radius: f32,
    pub min_joints: usize,
    pub max_joints: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            res: DEFAULT_RES,
            radius: DEFAULT_RADIUS,
            min_joints: MIN_SAMPLED_JOINTS,
            max_joints: MAX_SAMPLED_JOINTS,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if !self.res.is_power_of_two() || self.res < 2 || self.res > u16::MAX as usize {
            return Err(DataError::Config(format!("grid side {} must be a power of two >= 2", self.res)));
        }
        if !(MIN_SAMPLED_JOINTS..=MAX_SAMPLED_JOINTS).contains(&self.min_joints)
            || !(self.min_joints..=MAX_SAMPLED_JOINTS).contains(&self.max_joints)
        {
            return Err(DataError::Config(format!(
                "joint range {}..={} outside {MIN_SAMPLED_JOINTS}..={MAX_SAMPLED_JOINTS}",
                self.min_joints, self.max_joints
            )));
        }
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(DataError::InvalidRadius(self.radius));
        }
        Ok(())
    }

    pub fn header(&self, n_samples: usize) -> DatasetHeader {
        DatasetHeader {
            version: VERSION,
            n_samples,
            res: self.res,
            max_joints: self.max_joints,
            radius: self.radius,
        }
    }
}

/// Sample `index` of the dataset with the given seed. Draws from the
/// generator on stream `index`, so samples can be built in any order.
pub fn generate_sample(seed: u64, index: usize, cfg: &DataConfig) -> Result<DatasetSample, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    for _ in 0..MAX_RETRIES {
        let family = Family::ALL[rng.random_range(0..Family::ALL.len())];
        let n = rng.random_range(cfg.min_joints..=cfg.max_joints);
        let skeleton = sample_tree_with(&mut rng, n, family)?;
        let occupancy = rasterize_capsules(&skeleton, cfg.res, cfg.radius)?;
        if !occupancy.is_empty() {
            return Ok(DatasetSample {
                skeleton,
                occupancy,
                label: family.label(),
            });
        }
    }
    Err(DataError::EmptyOccupancy(index))
}

/// Deterministic dataset of `n` samples; built in parallel, returned in index order.
pub fn make_dataset(seed: u64, n: usize, cfg: &DataConfig) -> Result<Vec<DatasetSample>, DataError> {
    cfg.validate()?;
    if n == 0 || n > u32::MAX as usize {
        return Err(DataError::Config(format!("sample count {n} out of range")));
    }
    (0..n).into_par_iter().map(|i| generate_sample(seed, i, cfg)).collect()
}

pub fn write_dataset<W: Write>(out: &mut W, cfg: &DataConfig, samples: &[DatasetSample]) -> Result<(), DataError> {
    cfg.validate()?;
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(samples.len() as u32).to_le_bytes())?;
    out.write_all(&(cfg.res as u16).to_le_bytes())?;
    out.write_all(&(cfg.max_joints as u16).to_le_bytes())?;
    out.write_all(&cfg.radius.to_le_bytes())?;
    for (index, s) in samples.iter().enumerate() {
        if s.occupancy.res() != cfg.res || s.skeleton.len() > cfg.max_joints {
            return Err(DataError::CorruptSample {
                index,
                reason: "does not fit the dataset header".into(),
            });
        }
        out.write_all(&(s.label as u16).to_le_bytes())?;
        out.write_all(&(s.skeleton.len() as u16).to_le_bytes())?;
        for j in s.skeleton.joints() {
            for c in j {
                out.write_all(&c.to_le_bytes())?;
            }
        }
        for p in s.skeleton.parent_indices() {
            out.write_all(&(p as i16).to_le_bytes())?;
        }
        out.write_all(&s.occupancy.pack())?;
    }
    Ok(())
}

pub fn save_dataset(path: &Path, cfg: &DataConfig, samples: &[DatasetSample]) -> Result<(), DataError> {
    let file = File::create(path).map_err(|source| DataError::File {
        path: path.display().to_string(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    write_dataset(&mut w, cfg, samples)?;
    w.flush()?;
    Ok(())
}

/// Streaming, validating reader. Every sample's occupancy is checked
/// against a fresh rasterization of its skeleton.
pub struct DatasetReader<R> {
    inner: R,
    header: DatasetHeader,
    next: usize,
    failed: bool,
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> io::Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

impl<R: Read> DatasetReader<R> {
    pub fn new(mut inner: R) -> Result<Self, DataError> {
        let magic = read_array::<4, _>(&mut inner).map_err(|_| DataError::BadMagic)?;
        if &magic != MAGIC {
            return Err(DataError::BadMagic);
        }
        let version = u16::from_le_bytes(read_array(&mut inner)?);
        if version != VERSION {
            return Err(DataError::VersionMismatch(version));
        }
        let n_samples = u32::from_le_bytes(read_array(&mut inner)?) as usize;
        let res = u16::from_le_bytes(read_array(&mut inner)?) as usize;
        let max_joints = u16::from_le_bytes(read_array(&mut inner)?) as usize;
        let radius = f32::from_le_bytes(read_array(&mut inner)?);
        if !res.is_power_of_two() {
            return Err(GridError::NotPowerOfTwo(res).into());
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(DataError::InvalidRadius(radius));
        }
        Ok(Self {
            inner,
            header: DatasetHeader {
                version,
                n_samples,
                res,
                max_joints,
                radius,
            },
            next: 0,
            failed: false,
        })
    }

    pub fn header(&self) -> DatasetHeader {
        self.header
    }

    fn read_sample(&mut self, index: usize) -> Result<DatasetSample, DataError> {
        let corrupt = |reason: String| DataError::CorruptSample { index, reason };
        let io = |e: io::Error| corrupt(e.to_string());
        let r = &mut self.inner;
        let label = u16::from_le_bytes(read_array(r).map_err(io)?) as usize;
        let n = u16::from_le_bytes(read_array(r).map_err(io)?) as usize;
        if n == 0 || n > self.header.max_joints {
            return Err(corrupt(format!("joint count {n} outside 1..={}", self.header.max_joints)));
        }
        let mut joints = Vec::with_capacity(n);
        for _ in 0..n {
            let mut j = [0f32; 3];
            for c in j.iter_mut() {
                *c = f32::from_le_bytes(read_array(r).map_err(io)?);
            }
            joints.push(j);
        }
        let mut parents = Vec::with_capacity(n);
        for _ in 0..n {
            parents.push(i16::from_le_bytes(read_array(r).map_err(io)?) as i64);
        }
        let v = self.header.res;
        let mut bits = vec![0u8; (v * v * v).div_ceil(8)];
        r.read_exact(&mut bits).map_err(io)?;
        let skeleton = Skeleton::new(joints, &parents).map_err(|e| corrupt(e.to_string()))?;
        let occupancy = OccupancyGrid::unpack(v, &bits).map_err(|e| corrupt(e.to_string()))?;
        if Family::from_label(label).is_none() {
            return Err(corrupt(format!("label {label} is not a known family")));
        }
        if occupancy != rasterize_capsules(&skeleton, v, self.header.radius)? {
            return Err(corrupt("occupancy differs from the rasterized skeleton".into()));
        }
        Ok(DatasetSample {
            skeleton,
            occupancy,
            label,
        })
    }
}

impl<R: Read> Iterator for DatasetReader<R> {
    type Item = Result<DatasetSample, DataError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.next >= self.header.n_samples {
            return None;
        }
        let index = self.next;
        self.next += 1;
        let out = self.read_sample(index);
        self.failed = out.is_err();
        Some(out)
    }
}

pub fn open_dataset(path: &Path) -> Result<DatasetReader<BufReader<File>>, DataError> {
    let file = File::open(path).map_err(|source| DataError::File {
        path: path.display().to_string(),
        source,
    })?;
    DatasetReader::new(BufReader::new(file))
}

/// Reads and validates a whole dataset.
pub fn load_dataset(path: &Path) -> Result<(DatasetHeader, Vec<DatasetSample>), DataError> {
    let reader = open_dataset(path)?;
    let header = reader.header();
    let samples = reader.collect::<Result<Vec<_>, _>>()?;
    Ok((header, samples))
}

/// Samples per family label.
pub fn family_histogram(samples: &[DatasetSample]) -> [usize; 4] {
    let mut h = [0; 4];
    for s in samples {
        h[s.label.min(3)] += 1;
    }
    h
}

pub fn mean_occupancy_fraction(samples: &[DatasetSample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples
        .iter()
        .map(|s| s.occupancy.count() as f64 / s.occupancy.bits().len() as f64)
        .sum::<f64>()
        / samples.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_joint_is_a_sphere() {
        let s = Skeleton::new(vec![[0.0; 3]], &[-1]).unwrap();
        let occ = rasterize_capsules(&s, 16, 1.5).unwrap();
        // Only the eight centers at (±0.5, ±0.5, ±0.5) from (8, 8, 8) are within 1.5.
        assert_eq!(occ.count(), 8);
        assert_eq!(rasterize_capsules(&s, 16, 1.7).unwrap().count(), 8 + 24);
    }

    #[test]
    fn round_trip_in_memory() {
        let cfg = DataConfig::default();
        let samples = make_dataset(5, 6, &cfg).unwrap();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &cfg, &samples).unwrap();
        let back: Vec<_> = DatasetReader::new(&buf[..]).unwrap().collect::<Result<_, _>>().unwrap();
        assert_eq!(back, samples);
    }

    #[test]
    fn truncation_names_the_sample() {
        let cfg = DataConfig::default();
        let samples = make_dataset(5, 3, &cfg).unwrap();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &cfg, &samples).unwrap();
        buf.truncate(buf.len() - 10);
        let res: Vec<_> = DatasetReader::new(&buf[..]).unwrap().collect();
        assert!(matches!(res.last().unwrap(), Err(DataError::CorruptSample { index: 2, .. })));
    }
}
