//! Frozen voxel-latent flow transformer.
//!
//! The occupancy autoencoder is analytic: [`encode_occupancy`] average-pools
//! `2x2x2` blocks into latent channel 0 and normalizes with fixed constants,
//! [`decode_latent`] inverts the normalization, upsamples and thresholds.
//! The velocity network embeds latent tokens, adds a positional embedding
//! plus timestep and label embeddings, and runs `L` pre-norm transformer
//! blocks. An adapter may be hooked into every block (see [`crate::adapter`]).

use rand::Rng;
use thiserror::Error;

use crate::adapter;
use crate::layers::{self, sinusoid_features};
use crate::nn::{Binder, Graph, HookPosition, ModelConfig, NnError, ParamStore, Scalar, Tensor, Var};

pub const PREFIX: &str = "backbone.";

/// Mean and scale of pooled occupancy used to normalize latent channel 0.
pub const OCC_SHIFT: f64 = 0.04;
pub const OCC_SCALE: f64 = 0.15;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("resolution {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("resolution mismatch: {0} vs {1}")]
    ResolutionMismatch(usize, usize),
    #[error("timestep {0} outside [0, 1]")]
    OutOfRange(f64),
}

/// Binary voxel grid, indexed `(x * V + y) * V + z`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OccupancyGrid {
    res: usize,
    bits: Vec<bool>,
}

impl OccupancyGrid {
    pub fn empty(res: usize) -> Result<Self, GridError> {
        if !res.is_power_of_two() {
            return Err(GridError::NotPowerOfTwo(res));
        }
        Ok(Self {
            res,
            bits: vec![false; res * res * res],
        })
    }

    pub fn from_fn(res: usize, mut f: impl FnMut(usize, usize, usize) -> bool) -> Result<Self, GridError> {
        let mut g = Self::empty(res)?;
        for x in 0..res {
            for y in 0..res {
                for z in 0..res {
                    g.bits[(x * res + y) * res + z] = f(x, y, z);
                }
            }
        }
        Ok(g)
    }

    pub fn from_bits(res: usize, bits: Vec<bool>) -> Result<Self, GridError> {
        if !res.is_power_of_two() {
            return Err(GridError::NotPowerOfTwo(res));
        }
        if bits.len() != res * res * res {
            return Err(GridError::ResolutionMismatch(res, bits.len()));
        }
        Ok(Self { res, bits })
    }

    pub fn res(&self) -> usize {
        self.res
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.res + y) * self.res + z
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let r = self.res;
        [idx / (r * r), (idx / r) % r, idx % r]
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.bits[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, value: bool) {
        let i = self.index(x, y, z);
        self.bits[i] = value;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    /// Center of voxel `i` along one axis in normalized `[-0.5, 0.5]` space.
    pub fn center_coord(&self, i: usize) -> f64 {
        (i as f64 + 0.5) / self.res as f64 - 0.5
    }

    /// Normalized centers of all occupied voxels, in index order.
    pub fn occupied_centers(&self) -> Vec<[f64; 3]> {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(|(i, _)| {
                let c = self.coords(i);
                [self.center_coord(c[0]), self.center_coord(c[1]), self.center_coord(c[2])]
            })
            .collect()
    }

    /// Bits packed LSB-first into whole bytes.
    pub fn pack(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.bits.len().div_ceil(8)];
        for (i, b) in self.bits.iter().enumerate() {
            if *b {
                out[i / 8] |= 1 << (i % 8);
            }
        }
        out
    }

    pub fn unpack(res: usize, bytes: &[u8]) -> Result<Self, GridError> {
        let n = res * res * res;
        if bytes.len() != n.div_ceil(8) {
            return Err(GridError::ResolutionMismatch(res, bytes.len()));
        }
        let bits = (0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect();
        Self::from_bits(res, bits)
    }
}

/// Dense latent grid, token-major: `values[token * channels + c]` with
/// `token = (x * R + y) * R + z`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid {
    res: usize,
    channels: usize,
    values: Vec<f64>,
}

impl LatentGrid {
    pub fn zeros(res: usize, channels: usize) -> Self {
        Self {
            res,
            channels,
            values: vec![0.0; res * res * res * channels],
        }
    }

    pub fn from_values(res: usize, channels: usize, values: Vec<f64>) -> Result<Self, NnError> {
        if values.len() != res * res * res * channels {
            return Err(NnError::ShapeMismatch(format!(
                "{} values for a {res}^3 x {channels} latent",
                values.len()
            )));
        }
        Ok(Self { res, channels, values })
    }

    pub fn res(&self) -> usize {
        self.res
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn n_tokens(&self) -> usize {
        self.res * self.res * self.res
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn position(&self, token: usize) -> [usize; 3] {
        let r = self.res;
        [token / (r * r), (token / r) % r, token % r]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.res == other.res && self.channels == other.channels
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_fn(&[self.n_tokens(), self.channels], |i| T::of(self.values[i]))
    }

    pub fn from_tensor<T: Scalar>(res: usize, t: &Tensor<T>) -> Result<Self, NnError> {
        let (_, channels) = t.rows_cols();
        Self::from_values(res, channels, t.data().iter().map(|v| v.f64()).collect())
    }
}

/// Frozen encoder: `2x2x2` average pooling into channel 0, normalized by the
/// fixed occupancy statistics. Other channels are zero.
pub fn encode_occupancy(occ: &OccupancyGrid, channels: usize) -> LatentGrid {
    let r = occ.res() / 2;
    let mut z = LatentGrid::zeros(r, channels.max(1));
    for x in 0..r {
        for y in 0..r {
            for zz in 0..r {
                let mut count = 0u32;
                for d in 0..8 {
                    if occ.get(2 * x + (d >> 2), 2 * y + ((d >> 1) & 1), 2 * zz + (d & 1)) {
                        count += 1;
                    }
                }
                let pooled = count as f64 / 8.0;
                let token = (x * r + y) * r + zz;
                z.values[token * z.channels] = (pooled - OCC_SHIFT) / OCC_SCALE;
            }
        }
    }
    z
}

/// Frozen decoder: inverse normalization of channel 0, nearest-neighbour
/// upsampling by 2 and thresholding (`pooled >= threshold` is occupied).
pub fn decode_latent(z: &LatentGrid, threshold: f64) -> OccupancyGrid {
    let r = z.res();
    let mut occ = OccupancyGrid::empty(2 * r).expect("latent resolution is a power of two");
    for token in 0..z.n_tokens() {
        let pooled = z.values[token * z.channels] * OCC_SCALE + OCC_SHIFT;
        if pooled >= threshold {
            let [x, y, zz] = z.position(token);
            for d in 0..8 {
                occ.set(2 * x + (d >> 2), 2 * y + ((d >> 1) & 1), 2 * zz + (d & 1), true);
            }
        }
    }
    occ
}

/// Sin/cos features of `t` at geometrically spaced frequencies.
pub fn timestep_features(t: f64, n_freqs: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * n_freqs);
    for k in 0..n_freqs {
        let freq = (-(10000f64.ln()) * k as f64 / n_freqs as f64).exp();
        let arg = 1000.0 * t * freq;
        out.push(arg.sin());
        out.push(arg.cos());
    }
    out
}

/// `1 x F` timestep embedding: sinusoid features through `linear -> SiLU -> linear`.
pub fn timestep_embed<T: Scalar>(
    g: &mut Graph<T>,
    p: &mut Binder<'_, T>,
    cfg: &ModelConfig,
    t: f64,
) -> Result<Var, crate::Error> {
    if !(0.0..=1.0).contains(&t) {
        return Err(GridError::OutOfRange(t).into());
    }
    let feats = timestep_features(t, cfg.time_freqs);
    let x = g.constant(Tensor::new(vec![1, feats.len()], feats.into_iter().map(T::of).collect())?);
    let h = layers::linear(g, p, "backbone.time.fc1", x)?;
    let h = g.silu(h)?;
    Ok(layers::linear(g, p, "backbone.time.fc2", h)?)
}

/// Centers of latent cells in normalized space, token order.
pub fn latent_cell_centers(res: usize) -> Vec<[f64; 3]> {
    let c = |i: usize| (i as f64 + 0.5) / res as f64 - 0.5;
    (0..res * res * res)
        .map(|t| [c(t / (res * res)), c((t / res) % res), c(t % res)])
        .collect()
}

pub fn block_prefix(i: usize) -> String {
    format!("backbone.block{i}")
}

/// Fresh backbone parameters (trainable, to be frozen after pretraining).
///
/// The positional embedding starts from the same zero-padded sinusoid
/// features used for joint coordinates.
pub fn init_params<T: Scalar, R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<ParamStore<T>, NnError> {
    cfg.validate()?;
    let f = cfg.feature_dim;
    let mut store = ParamStore::new();
    layers::init_linear(&mut store, "backbone.input", cfg.latent_channels, f, rng)?;
    let mut pos = Tensor::<T>::randn(&[cfg.n_tokens(), f], 0.02, rng);
    for (row, c) in pos.data_mut().chunks_mut(f).zip(latent_cell_centers(cfg.latent_res)) {
        for (dst, v) in row.iter_mut().zip(sinusoid_features(c, cfg.freq_bands)) {
            *dst += T::of(v);
        }
    }
    store.insert("backbone.pos_embed", pos, false)?;
    layers::init_linear(&mut store, "backbone.time.fc1", 2 * cfg.time_freqs, f, rng)?;
    layers::init_linear(&mut store, "backbone.time.fc2", f, f, rng)?;
    store.insert(
        "backbone.label_embed",
        Tensor::randn(&[cfg.n_labels + 1, f], 0.5, rng),
        false,
    )?;
    for i in 0..cfg.n_blocks {
        let p = block_prefix(i);
        layers::init_norm(&mut store, &format!("{p}.norm_attn"), f)?;
        for name in ["q", "k", "v", "out"] {
            layers::init_linear(&mut store, &format!("{p}.attn.{name}"), f, f, rng)?;
        }
        layers::init_norm(&mut store, &format!("{p}.norm_ffn"), f)?;
        layers::init_ffn(&mut store, &format!("{p}.ffn"), f, cfg.ffn_multiplier * f, rng)?;
    }
    layers::init_norm(&mut store, "backbone.final_norm", f)?;
    layers::init_linear(&mut store, "backbone.output", f, cfg.latent_channels, rng)?;
    Ok(store)
}

/// Label row index; `None` selects the learned null row.
pub fn label_index(cfg: &ModelConfig, label: Option<usize>) -> Result<usize, NnError> {
    match label {
        None => Ok(cfg.n_labels),
        Some(l) if l < cfg.n_labels => Ok(l),
        Some(l) => Err(NnError::IndexOutOfRange {
            index: l,
            len: cfg.n_labels,
        }),
    }
}

/// Records the velocity network on `g`; returns the `tokens x C` prediction.
///
/// With `skeleton_tokens` present, the adapter block of every hooked
/// backbone block is applied at the configured hook position.
#[allow(clippy::too_many_arguments)]
pub fn forward_graph<T: Scalar>(
    g: &mut Graph<T>,
    p: &mut Binder<'_, T>,
    cfg: &ModelConfig,
    z_t: &LatentGrid,
    t: f64,
    label: Option<usize>,
    skeleton_tokens: Option<Var>,
) -> Result<Var, crate::Error> {
    if z_t.res() != cfg.latent_res || z_t.channels() != cfg.latent_channels {
        return Err(NnError::ShapeMismatch(format!(
            "latent {}^3 x {} for a {}^3 x {} model",
            z_t.res(),
            z_t.channels(),
            cfg.latent_res,
            cfg.latent_channels
        ))
        .into());
    }
    let f = cfg.feature_dim;
    let dh = f / cfg.n_heads;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let hooked = cfg.hooked_blocks();

    let z = g.constant(z_t.to_tensor());
    let x = layers::linear(g, p, "backbone.input", z)?;
    let pos = p.var(g, "backbone.pos_embed")?;
    let mut x = g.add(x, pos)?;
    let temb = timestep_embed(g, p, cfg, t)?;
    let table = p.var(g, "backbone.label_embed")?;
    let lemb = g.embedding(table, &[label_index(cfg, label)?], &[1])?;
    let cond = g.add(temb, lemb)?;
    x = g.add_row(x, cond)?;

    for i in 0..cfg.n_blocks {
        let pre = block_prefix(i);
        let h = layers::layer_norm(g, p, &format!("{pre}.norm_attn"), x, cfg.ln_eps)?;
        let q = layers::linear(g, p, &format!("{pre}.attn.q"), h)?;
        let k = layers::linear(g, p, &format!("{pre}.attn.k"), h)?;
        let v = layers::linear(g, p, &format!("{pre}.attn.v"), h)?;
        let a = g.attention(q, k, v, cfg.n_heads, scale, None, None)?;
        let a = layers::linear(g, p, &format!("{pre}.attn.out"), a)?;
        x = g.add(x, a)?;
        let hook = skeleton_tokens.filter(|_| hooked.contains(&i));
        if let (Some(tokens), HookPosition::PostAttention) = (hook, cfg.hook_position) {
            x = adapter::adapter_block(g, p, cfg, i, x, tokens)?;
        }
        let h = layers::layer_norm(g, p, &format!("{pre}.norm_ffn"), x, cfg.ln_eps)?;
        let h = layers::ffn(g, p, &format!("{pre}.ffn"), h)?;
        x = g.add(x, h)?;
        if let (Some(tokens), HookPosition::PostBlock) = (hook, cfg.hook_position) {
            x = adapter::adapter_block(g, p, cfg, i, x, tokens)?;
        }
    }
    let h = layers::layer_norm(g, p, "backbone.final_norm", x, cfg.ln_eps)?;
    Ok(layers::linear(g, p, "backbone.output", h)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block_constant(seed: u64) -> OccupancyGrid {
        let mut state = seed;
        let mut coarse = vec![false; 64];
        for c in coarse.iter_mut() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *c = state >> 62 == 0;
        }
        OccupancyGrid::from_fn(8, |x, y, z| coarse[((x / 2) * 4 + y / 2) * 4 + z / 2]).unwrap()
    }

    #[test]
    fn pooling_examples() {
        let empty = OccupancyGrid::empty(16).unwrap();
        let z = encode_occupancy(&empty, 4);
        assert!(z.values().chunks(4).all(|c| c == [(0.0 - OCC_SHIFT) / OCC_SCALE, 0.0, 0.0, 0.0]));
        let full = OccupancyGrid::from_fn(16, |_, _, _| true).unwrap();
        let z = encode_occupancy(&full, 4);
        assert!(z.values().chunks(4).all(|c| c[0] == (1.0 - OCC_SHIFT) / OCC_SCALE));

        let mut one = OccupancyGrid::empty(16).unwrap();
        one.set(5, 2, 9, true);
        let z = encode_occupancy(&one, 4);
        let raw: Vec<f64> = z.values().chunks(4).map(|c| c[0] * OCC_SCALE + OCC_SHIFT).collect();
        let hot: Vec<usize> = (0..raw.len()).filter(|&i| raw[i] > 1e-9).collect();
        assert_eq!(hot, vec![(2 * 8 + 1) * 8 + 4]);
        assert!((raw[hot[0]] - 0.125).abs() < 1e-12);
    }

    #[test]
    fn block_constant_round_trip() {
        for seed in 0..20 {
            let occ = block_constant(seed);
            assert_eq!(decode_latent(&encode_occupancy(&occ, 4), DEFAULT_THRESHOLD), occ);
        }
    }

    #[test]
    fn zero_latent_decodes_empty() {
        assert!(decode_latent(&LatentGrid::zeros(8, 4), DEFAULT_THRESHOLD).is_empty());
    }

    #[test]
    fn pack_round_trip() {
        let occ = block_constant(3);
        assert_eq!(OccupancyGrid::unpack(8, &occ.pack()).unwrap(), occ);
        assert!(OccupancyGrid::empty(12).is_err());
    }
}
