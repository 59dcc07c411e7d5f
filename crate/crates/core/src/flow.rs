//! Rectified flow: interpolation, velocity targets, the flow-matching loss,
//! classifier-free guidance, Euler sampling and masked (Repaint) editing.
//!
//! Time runs from data at `t = 0` to noise at `t = 1`:
//! `z_t = (1 - t) z_0 + t ε`, target velocity `ε - z_0`.
//!
//! The sampler integrates on the uniform grid `t_k = 1 - k/S` with Euler
//! steps. It keeps an anchor latent and the running mean of the velocities
//! evaluated since the anchor, so `z_k = z_anchor - (t_anchor - t_k) * mean`.
//! That is the Euler recursion rearranged; on a constant field the mean is
//! exact, which makes integration of such fields exact for every `S`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::adapter::{CompositeModel, SkeletonInput};
use crate::backbone::{decode_latent, LatentGrid, OccupancyGrid, DEFAULT_THRESHOLD};
use crate::nn::{NnError, Scalar};
use crate::skeleton::Skeleton;
use crate::Error;

pub const TEXT_DROPOUT: f64 = 0.10;

/// RNG streams of one sampling seed.
const STREAM_INIT: u64 = 0;
const STREAM_KNOWN: u64 = 1;
const STREAM_RESAMPLE: u64 = 2;

fn check_shapes(a: &LatentGrid, b: &LatentGrid) -> Result<(), Error> {
    if !a.same_shape(b) {
        return Err(NnError::ShapeMismatch(format!(
            "latents {}^3 x {} and {}^3 x {}",
            a.res(),
            a.channels(),
            b.res(),
            b.channels()
        ))
        .into());
    }
    Ok(())
}

pub fn interpolate(z0: &LatentGrid, eps: &LatentGrid, t: f64) -> Result<LatentGrid, Error> {
    check_shapes(z0, eps)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::OutOfRange(t));
    }
    let mut out = z0.clone();
    for (o, e) in out.values_mut().iter_mut().zip(eps.values()) {
        *o = (1.0 - t) * *o + t * e;
    }
    Ok(out)
}

pub fn target_velocity(z0: &LatentGrid, eps: &LatentGrid) -> Result<LatentGrid, Error> {
    check_shapes(z0, eps)?;
    let mut out = eps.clone();
    for (o, z) in out.values_mut().iter_mut().zip(z0.values()) {
        *o -= z;
    }
    Ok(out)
}

pub fn gaussian_latent<R: Rng + ?Sized>(rng: &mut R, res: usize, channels: usize) -> LatentGrid {
    let values = (0..res * res * res * channels).map(|_| rng.sample(StandardNormal)).collect();
    LatentGrid::from_values(res, channels, values).expect("sized by construction")
}

/// A velocity predictor `v(z_t, t, label, skeleton)`.
pub trait VelocityModel {
    fn velocity(
        &self,
        z_t: &LatentGrid,
        t: f64,
        label: Option<usize>,
        skeleton: Option<&Skeleton>,
    ) -> Result<LatentGrid, Error>;
}

impl<F> VelocityModel for F
where
    F: Fn(&LatentGrid, f64, Option<usize>, Option<&Skeleton>) -> Result<LatentGrid, Error>,
{
    fn velocity(&self, z_t: &LatentGrid, t: f64, label: Option<usize>, skeleton: Option<&Skeleton>) -> Result<LatentGrid, Error> {
        self(z_t, t, label, skeleton)
    }
}

impl<T: Scalar> VelocityModel for CompositeModel<T> {
    fn velocity(&self, z_t: &LatentGrid, t: f64, label: Option<usize>, skeleton: Option<&Skeleton>) -> Result<LatentGrid, Error> {
        let input = skeleton.map_or(SkeletonInput::Absent, SkeletonInput::Encoded);
        CompositeModel::velocity(self, z_t, t, label, input)
    }
}

/// The composite model with its skeleton encoder output replaced by zeros.
#[derive(Debug, Clone, Copy)]
pub struct ZeroedSkeleton<'m, T>(pub &'m CompositeModel<T>);

impl<T: Scalar> VelocityModel for ZeroedSkeleton<'_, T> {
    fn velocity(&self, z_t: &LatentGrid, t: f64, label: Option<usize>, skeleton: Option<&Skeleton>) -> Result<LatentGrid, Error> {
        let input = skeleton.map_or(SkeletonInput::Absent, SkeletonInput::Zeroed);
        self.0.velocity(z_t, t, label, input)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub text_dropout_p: f64,
    /// Must stay 0: the skeleton pathway is trained without dropout.
    pub skeleton_dropout_p: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            epochs: 30,
            lr: 1e-4,
            text_dropout_p: TEXT_DROPOUT,
            skeleton_dropout_p: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.text_dropout_p) {
            return Err(Error::Config(format!("text_dropout_p {} outside [0, 1]", self.text_dropout_p)));
        }
        if self.skeleton_dropout_p != 0.0 {
            return Err(Error::Config("skeleton_dropout_p is fixed at 0".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        Ok(())
    }
}

/// Per-item randomness of one flow-matching training term.
#[derive(Debug, Clone)]
pub struct FlowDraw {
    pub t: f64,
    pub eps: LatentGrid,
    pub drop_label: bool,
    pub drop_skeleton: bool,
}

impl FlowDraw {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, res: usize, channels: usize, cfg: &TrainConfig) -> Self {
        let t = rng.random::<f64>();
        let eps = gaussian_latent(rng, res, channels);
        let drop_label = rng.random::<f64>() < cfg.text_dropout_p;
        let drop_skeleton = cfg.skeleton_dropout_p > 0.0 && rng.random::<f64>() < cfg.skeleton_dropout_p;
        Self {
            t,
            eps,
            drop_label,
            drop_skeleton,
        }
    }
}

/// Counters of condition dropout over a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DropoutStats {
    pub items: u64,
    pub label_dropped: u64,
    pub skeleton_dropped: u64,
}

impl DropoutStats {
    pub fn record(&mut self, draw: &FlowDraw) {
        self.items += 1;
        self.label_dropped += draw.drop_label as u64;
        self.skeleton_dropped += draw.drop_skeleton as u64;
    }

    pub fn merge(&mut self, other: DropoutStats) {
        self.items += other.items;
        self.label_dropped += other.label_dropped;
        self.skeleton_dropped += other.skeleton_dropped;
    }

    pub fn label_fraction(&self) -> f64 {
        self.label_dropped as f64 / self.items.max(1) as f64
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FlowItem<'a> {
    pub z0: &'a LatentGrid,
    pub skeleton: Option<&'a Skeleton>,
    pub label: Option<usize>,
}

/// Mean over the batch of the per-element squared velocity error.
pub fn fm_loss<M: VelocityModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    batch: &[FlowItem<'_>],
    rng: &mut R,
    cfg: &TrainConfig,
    stats: &mut DropoutStats,
) -> Result<f64, Error> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let mut total = 0.0;
    for item in batch {
        let draw = FlowDraw::sample(rng, item.z0.res(), item.z0.channels(), cfg);
        stats.record(&draw);
        let z_t = interpolate(item.z0, &draw.eps, draw.t)?;
        let target = target_velocity(item.z0, &draw.eps)?;
        let label = if draw.drop_label { None } else { item.label };
        let skeleton = if draw.drop_skeleton { None } else { item.skeleton };
        let pred = model.velocity(&z_t, draw.t, label, skeleton)?;
        check_shapes(&pred, &target)?;
        let se: f64 = pred.values().iter().zip(target.values()).map(|(p, q)| (p - q) * (p - q)).sum();
        total += se / pred.values().len() as f64;
    }
    Ok(total / batch.len() as f64)
}

/// `v_null + w (v_cond - v_null)`, skeleton present in both branches.
pub fn cfg_velocity<M: VelocityModel + ?Sized>(
    model: &M,
    z_t: &LatentGrid,
    t: f64,
    label: Option<usize>,
    skeleton: Option<&Skeleton>,
    w: f64,
) -> Result<LatentGrid, Error> {
    if !(w >= 0.0) {
        return Err(Error::Config(format!("cfg weight {w} must be >= 0")));
    }
    if label.is_none() || w == 0.0 {
        return model.velocity(z_t, t, None, skeleton);
    }
    if w == 1.0 {
        return model.velocity(z_t, t, label, skeleton);
    }
    let mut v = model.velocity(z_t, t, None, skeleton)?;
    let v_cond = model.velocity(z_t, t, label, skeleton)?;
    check_shapes(&v, &v_cond)?;
    for (n, c) in v.values_mut().iter_mut().zip(v_cond.values()) {
        *n += w * (c - *n);
    }
    Ok(v)
}

/// Half-open box of latent cells `[min, max)` per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatentBox {
    pub min: [usize; 3],
    pub max: [usize; 3],
}

impl LatentBox {
    pub fn full(res: usize) -> Self {
        Self {
            min: [0; 3],
            max: [res; 3],
        }
    }

    pub fn empty() -> Self {
        Self {
            min: [0; 3],
            max: [0; 3],
        }
    }

    /// Smallest latent box covering the half-open voxel box, for a latent
    /// cell size of `cell` voxels.
    pub fn from_voxels(min: [usize; 3], max: [usize; 3], cell: usize) -> Self {
        Self {
            min: min.map(|v| v / cell),
            max: max.map(|v| v.div_ceil(cell)),
        }
    }

    pub fn validate(&self, res: usize) -> Result<(), Error> {
        if (0..3).any(|a| self.min[a] > self.max[a] || self.max[a] > res) {
            return Err(Error::MaskOutOfBounds(format!("{:?}..{:?} in a {res}^3 grid", self.min, self.max)));
        }
        Ok(())
    }

    pub fn contains(&self, p: [usize; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] < self.max[a])
    }

    /// Editable flag per latent token.
    pub fn token_mask(&self, res: usize) -> Vec<bool> {
        (0..res * res * res)
            .map(|t| self.contains([t / (res * res), (t / res) % res, t % res]))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSampleConfig {
    pub steps: usize,
    pub cfg_weight: f64,
    pub seed: u64,
    pub mask: Option<LatentBox>,
    pub resample_u: usize,
}

impl Default for FlowSampleConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            cfg_weight: 3.0,
            seed: 0,
            mask: None,
            resample_u: 1,
        }
    }
}

impl FlowSampleConfig {
    pub fn validate(&self, res: usize) -> Result<(), Error> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if self.resample_u == 0 {
            return Err(Error::Config("resample_u must be >= 1".into()));
        }
        if !(self.cfg_weight >= 0.0) {
            return Err(Error::Config(format!("cfg weight {} must be >= 0", self.cfg_weight)));
        }
        if let Some(m) = &self.mask {
            m.validate(res)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub latent: LatentGrid,
    pub occupancy: OccupancyGrid,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Euler state: `z = anchor - (t_anchor - t) * mean` over the velocities
/// evaluated since the anchor.
struct Integrator {
    anchor: LatentGrid,
    t_anchor_step: usize,
    mean: Vec<f64>,
    count: usize,
}

impl Integrator {
    fn new(anchor: LatentGrid, step: usize) -> Self {
        let n = anchor.values().len();
        Self {
            anchor,
            t_anchor_step: step,
            mean: vec![0.0; n],
            count: 0,
        }
    }

    fn push(&mut self, v: &LatentGrid) {
        self.count += 1;
        let inv = 1.0 / self.count as f64;
        for (m, x) in self.mean.iter_mut().zip(v.values()) {
            *m += (x - *m) * inv;
        }
    }

    /// Latent at step index `k` (time `1 - k/S`).
    fn position(&self, k: usize, steps: usize) -> LatentGrid {
        let elapsed = (k - self.t_anchor_step) as f64 / steps as f64;
        let mut z = self.anchor.clone();
        for (o, m) in z.values_mut().iter_mut().zip(&self.mean) {
            *o -= elapsed * m;
        }
        z
    }
}

fn time_at(k: usize, steps: usize) -> f64 {
    (steps - k) as f64 / steps as f64
}

/// Generates a latent from noise with `S` Euler steps of the guided field.
pub fn sample<M: VelocityModel + ?Sized>(
    model: &M,
    skeleton: Option<&Skeleton>,
    label: Option<usize>,
    cfg: &FlowSampleConfig,
    res: usize,
    channels: usize,
) -> Result<SampleOutput, Error> {
    let start = gaussian_latent(&mut stream_rng(cfg.seed, STREAM_INIT), res, channels);
    sample_from(model, start, skeleton, label, cfg)
}

/// [`sample`] starting from a given `t = 1` latent.
pub fn sample_from<M: VelocityModel + ?Sized>(
    model: &M,
    start: LatentGrid,
    skeleton: Option<&Skeleton>,
    label: Option<usize>,
    cfg: &FlowSampleConfig,
) -> Result<SampleOutput, Error> {
    cfg.validate(start.res())?;
    let s = cfg.steps;
    let mut integ = Integrator::new(start, 0);
    for k in 0..s {
        let z = integ.position(k, s);
        let v = cfg_velocity(model, &z, time_at(k, s), label, skeleton, cfg.cfg_weight)?;
        integ.push(&v);
    }
    let latent = integ.position(s, s);
    let occupancy = decode_latent(&latent, DEFAULT_THRESHOLD);
    Ok(SampleOutput { latent, occupancy })
}

/// Masked editing: tokens inside `cfg.mask` are regenerated under the new
/// skeleton; all other tokens follow the re-noised original at every step
/// and equal `z0` exactly at the end. A missing mask edits everything.
pub fn repaint_sample<M: VelocityModel + ?Sized>(
    model: &M,
    z0: &LatentGrid,
    skeleton: Option<&Skeleton>,
    label: Option<usize>,
    cfg: &FlowSampleConfig,
) -> Result<SampleOutput, Error> {
    let (res, ch) = (z0.res(), z0.channels());
    cfg.validate(res)?;
    let editable = cfg.mask.unwrap_or(LatentBox::full(res)).token_mask(res);
    let s = cfg.steps;
    let mut known_rng = stream_rng(cfg.seed, STREAM_KNOWN);
    let mut resample_rng = stream_rng(cfg.seed, STREAM_RESAMPLE);
    let start = gaussian_latent(&mut stream_rng(cfg.seed, STREAM_INIT), res, ch);

    let composite = |z: &mut LatentGrid, known: &LatentGrid| {
        for (tok, edit) in editable.iter().enumerate() {
            if !edit {
                let r = tok * ch..(tok + 1) * ch;
                z.values_mut()[r.clone()].copy_from_slice(&known.values()[r]);
            }
        }
    };

    let all_editable = editable.iter().all(|e| *e);
    let mut integ = Integrator::new(start, 0);
    for k in 0..s {
        let t = time_at(k, s);
        for u in 0..cfg.resample_u {
            let eps = gaussian_latent(&mut known_rng, res, ch);
            if !all_editable {
                let mut z = integ.position(k, s);
                composite(&mut z, &interpolate(z0, &eps, t)?);
                integ = Integrator::new(z, k);
            }
            let z = integ.position(k, s);
            let v = cfg_velocity(model, &z, t, label, skeleton, cfg.cfg_weight)?;
            integ.push(&v);
            if u + 1 < cfg.resample_u {
                let t_next = time_at(k + 1, s);
                let jumped = renoise(&integ.position(k + 1, s), t_next, t, &mut resample_rng);
                integ = Integrator::new(jumped, k);
            }
        }
    }
    let mut latent = integ.position(s, s);
    composite(&mut latent, z0);
    let occupancy = decode_latent(&latent, DEFAULT_THRESHOLD);
    Ok(SampleOutput { latent, occupancy })
}

/// Forward jump of a latent from `t_from` to the noisier `t_to` along the
/// interpolation path: `x_t = (1-t)/(1-t') x_t' + sqrt(t^2 - ((1-t) t'/(1-t'))^2) ε`.
pub fn renoise<R: Rng + ?Sized>(z: &LatentGrid, t_from: f64, t_to: f64, rng: &mut R) -> LatentGrid {
    let a = (1.0 - t_to) / (1.0 - t_from);
    let carried = a * t_from;
    let sigma = (t_to * t_to - carried * carried).max(0.0).sqrt();
    let noise = gaussian_latent(rng, z.res(), z.channels());
    let mut out = z.clone();
    for (o, e) in out.values_mut().iter_mut().zip(noise.values()) {
        *o = a * *o + sigma * e;
    }
    out
}
