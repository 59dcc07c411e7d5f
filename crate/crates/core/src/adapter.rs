//! Skeletal cross-attention adapters and the composite conditional model.
//!
//! Every hooked backbone block `i` owns `adapter.block{i}.*`:
//!
//! ```text
//! f_attn = MHA(Q = norm_h(h) W_q, K = norm_skel(f_skel) W_k, V = norm_skel(f_skel) W_v) W_out
//! h'     = h + zero_proj(f_attn)
//! ```
//!
//! `zero_proj` starts at exactly zero, so a fresh adapter leaves the backbone
//! output bit-for-bit unchanged.

use rand::Rng;

use crate::backbone::{self, LatentGrid};
use crate::encoder;
use crate::layers;
use crate::nn::{Binder, Graph, ModelConfig, NnError, ParamStore, Scalar, Tensor, Var};
use crate::skeleton::Skeleton;
use crate::Error;

pub const PREFIX: &str = "adapter.";

pub fn block_prefix(i: usize) -> String {
    format!("adapter.block{i}")
}

/// Fresh adapter blocks for every hooked backbone block.
pub fn init_params<T: Scalar, R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<ParamStore<T>, NnError> {
    cfg.validate()?;
    let f = cfg.feature_dim;
    let mut store = ParamStore::new();
    for i in cfg.hooked_blocks() {
        let p = block_prefix(i);
        layers::init_norm(&mut store, &format!("{p}.norm_h"), f)?;
        layers::init_norm(&mut store, &format!("{p}.norm_skel"), f)?;
        for name in ["q", "k", "v", "out"] {
            layers::init_linear(&mut store, &format!("{p}.cross.{name}"), f, f, rng)?;
        }
        layers::init_zero_linear(&mut store, &format!("{p}.zero_proj"), f, f)?;
    }
    Ok(store)
}

/// Multi-head cross-attention from voxel tokens `h` (`M x F`) onto skeleton
/// tokens (`N x F`) of adapter block `i`; returns `f_attn` (`M x F`).
pub fn skeletal_cross_attention<T: Scalar>(
    g: &mut Graph<T>,
    p: &mut Binder<'_, T>,
    cfg: &ModelConfig,
    i: usize,
    h: Var,
    skeleton_tokens: Var,
) -> Result<Var, NnError> {
    let pre = block_prefix(i);
    let hn = layers::layer_norm(g, p, &format!("{pre}.norm_h"), h, cfg.ln_eps)?;
    let sn = layers::layer_norm(g, p, &format!("{pre}.norm_skel"), skeleton_tokens, cfg.ln_eps)?;
    let q = layers::linear(g, p, &format!("{pre}.cross.q"), hn)?;
    let k = layers::linear(g, p, &format!("{pre}.cross.k"), sn)?;
    let v = layers::linear(g, p, &format!("{pre}.cross.v"), sn)?;
    let dh = cfg.feature_dim / cfg.n_heads;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let a = g.attention(q, k, v, cfg.n_heads, scale, None, None)?;
    layers::linear(g, p, &format!("{pre}.cross.out"), a)
}

/// `h + W_o f_attn` through the zero-initialized projection of block `i`.
pub fn inject<T: Scalar>(g: &mut Graph<T>, p: &mut Binder<'_, T>, i: usize, h: Var, f_attn: Var) -> Result<Var, NnError> {
    if g.value(h).shape() != g.value(f_attn).shape() {
        return Err(NnError::ShapeMismatch(format!(
            "inject: h {:?}, f_attn {:?}",
            g.value(h).shape(),
            g.value(f_attn).shape()
        )));
    }
    let delta = layers::linear(g, p, &format!("{}.zero_proj", block_prefix(i)), f_attn)?;
    g.add(h, delta)
}

/// Cross-attention followed by injection: the hook applied inside a backbone block.
pub fn adapter_block<T: Scalar>(
    g: &mut Graph<T>,
    p: &mut Binder<'_, T>,
    cfg: &ModelConfig,
    i: usize,
    h: Var,
    skeleton_tokens: Var,
) -> Result<Var, NnError> {
    let f_attn = skeletal_cross_attention(g, p, cfg, i, h, skeleton_tokens)?;
    inject(g, p, i, h, f_attn)
}

/// What the adapter path sees for a skeleton.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SkeletonInput<'s> {
    /// Bare backbone, no adapter hook.
    Absent,
    /// Encoded skeleton tokens.
    Encoded(&'s Skeleton),
    /// Adapter hooked with all-zero skeleton tokens (one per joint).
    Zeroed(&'s Skeleton),
}

/// Frozen backbone plus trainable encoder and adapters.
#[derive(Debug, Clone)]
pub struct CompositeModel<T> {
    pub cfg: ModelConfig,
    pub params: ParamStore<T>,
}

/// Joins the three parameter groups. Backbone entries are frozen, encoder
/// and adapter entries trainable.
pub fn attach_adapter<T: Scalar>(
    cfg: &ModelConfig,
    backbone_params: ParamStore<T>,
    adapter_params: ParamStore<T>,
    encoder_params: ParamStore<T>,
) -> Result<CompositeModel<T>, Error> {
    cfg.validate()?;
    let hooked = cfg.hooked_blocks();
    let present = adapter_blocks_in(&adapter_params);
    if present != hooked {
        return Err(Error::ConfigMismatch(format!(
            "adapter blocks {present:?} but hooked backbone blocks {hooked:?}"
        )));
    }
    let backbone_blocks = (0..)
        .take_while(|i| backbone_params.contains(&format!("{}.norm_attn.scale", backbone::block_prefix(*i))))
        .count();
    if backbone_blocks != cfg.n_blocks {
        return Err(Error::ConfigMismatch(format!(
            "backbone has {backbone_blocks} blocks, config {}",
            cfg.n_blocks
        )));
    }
    let mut params = backbone_params.subset(backbone::PREFIX);
    params.merge(encoder_params.subset(encoder::PREFIX))?;
    params.merge(adapter_params.subset(PREFIX))?;
    params.set_frozen(backbone::PREFIX, true);
    params.set_frozen(encoder::PREFIX, false);
    params.set_frozen(PREFIX, false);
    Ok(CompositeModel { cfg: cfg.clone(), params })
}

/// Sorted block indices that own adapter parameters.
pub fn adapter_blocks_in<T: Scalar>(store: &ParamStore<T>) -> Vec<usize> {
    let mut out: Vec<usize> = store
        .names()
        .filter_map(|n| n.strip_prefix("adapter.block"))
        .filter_map(|rest| rest.split('.').next()?.parse().ok())
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

impl<T: Scalar> CompositeModel<T> {
    /// Fresh composite: new encoder and zero-initialized adapters on top of
    /// the given backbone.
    pub fn fresh<R: Rng + ?Sized>(cfg: &ModelConfig, backbone_params: ParamStore<T>, rng: &mut R) -> Result<Self, Error> {
        let enc = encoder::init_params(cfg, rng)?;
        let ad = init_params(cfg, rng)?;
        attach_adapter(cfg, backbone_params, ad, enc)
    }

    /// Records the full velocity network on `g`. Returns the prediction.
    pub fn forward_graph(
        &self,
        g: &mut Graph<T>,
        p: &mut Binder<'_, T>,
        z_t: &LatentGrid,
        t: f64,
        label: Option<usize>,
        skeleton: SkeletonInput<'_>,
    ) -> Result<Var, Error> {
        let tokens = match skeleton {
            SkeletonInput::Absent => None,
            SkeletonInput::Encoded(s) => Some(encoder::encode_skeleton_graph(g, p, &self.cfg, s)?),
            SkeletonInput::Zeroed(s) => Some(g.constant(Tensor::zeros(&[s.len(), self.cfg.feature_dim]))),
        };
        backbone::forward_graph(g, p, &self.cfg, z_t, t, label, tokens)
    }

    /// Inference-only velocity prediction.
    pub fn velocity(
        &self,
        z_t: &LatentGrid,
        t: f64,
        label: Option<usize>,
        skeleton: SkeletonInput<'_>,
    ) -> Result<LatentGrid, Error> {
        let mut g = Graph::new();
        let mut p = Binder::new(&self.params, false);
        let out = self.forward_graph(&mut g, &mut p, z_t, t, label, skeleton)?;
        Ok(LatentGrid::from_tensor(z_t.res(), g.value(out))?)
    }

    pub fn backbone_hash(&self) -> String {
        self.params.content_hash(backbone::PREFIX)
    }
}
