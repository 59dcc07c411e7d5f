//! Skeleton encoder: graph-relative positional attention over joint tokens.
//!
//! Each joint starts as a sinusoidal embedding of its coordinates. Two units
//! of `[norm -> topology-aware attention -> residual -> norm -> FFN -> residual]`
//! turn those into per-joint feature tokens. The topology-aware attention
//! adds to every query/key score a term looked up by the clipped hop
//! distance and relation code of the pair,
//!
//! ```text
//! a_ij = (q_i·k_j + q_i·Eq_D[D_ij] + k_j·Ek_D[D_ij] + q_i·Eq_R[R_ij] + k_j·Ek_R[R_ij]) / sqrt(F)
//! z_i  = Σ_j softmax_j(a_ij) (v_j + Ev_D[D_ij] + Ev_R[R_ij])
//! ```
//!
//! and is single-head so that the `sqrt(F)` scale applies to the whole score.
//!
//! Parameters live under `encoder.unit{u}.*`. The coordinate embedding is a
//! fixed zero-padding of the sinusoid features into `F` dims and owns no
//! parameters.

use rand::Rng;

use crate::layers::{self, sinusoid_features};
use crate::nn::{Binder, Graph, ModelConfig, NnError, ParamStore, Scalar, Tensor, Var};
use crate::skeleton::{Skeleton, TopologyMatrices};

pub const PREFIX: &str = "encoder.";

/// Std of the codebook initialization.
pub const CODEBOOK_INIT_STD: f64 = 0.02;

pub const CODEBOOK_TABLES: [&str; 6] = ["dist_q", "dist_k", "dist_v", "rel_q", "rel_k", "rel_v"];

pub fn unit_prefix(u: usize) -> String {
    format!("encoder.unit{u}")
}

/// Builds freshly initialized encoder parameters (all trainable).
pub fn init_params<T: Scalar, R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<ParamStore<T>, NnError> {
    cfg.validate()?;
    let f = cfg.feature_dim;
    let mut store = ParamStore::new();
    for u in 0..cfg.n_encoder_units {
        let p = unit_prefix(u);
        for name in ["q", "k", "v", "out"] {
            layers::init_linear(&mut store, &format!("{p}.attn.{name}"), f, f, rng)?;
        }
        for table in CODEBOOK_TABLES {
            let rows = if table.starts_with("dist") {
                cfg.d_max + 1
            } else {
                cfg.n_relations
            };
            store.insert(
                format!("{p}.attn.codebook.{table}"),
                Tensor::randn(&[rows, f], CODEBOOK_INIT_STD, rng),
                false,
            )?;
        }
        layers::init_norm(&mut store, &format!("{p}.norm_attn"), f)?;
        layers::init_norm(&mut store, &format!("{p}.norm_ffn"), f)?;
        layers::init_ffn(&mut store, &format!("{p}.ffn"), f, cfg.ffn_multiplier * f, rng)?;
    }
    Ok(store)
}

/// `N x F` initial joint tokens: per-axis sin/cos features at `freq_bands`
/// octaves, zero-padded to `feature_dim`.
pub fn embed_joints<T: Scalar>(skel: &Skeleton, freq_bands: usize, feature_dim: usize) -> Result<Tensor<T>, NnError> {
    let width = 6 * freq_bands;
    if width > feature_dim {
        return Err(NnError::Config(format!(
            "{width} joint features do not fit in feature_dim {feature_dim}"
        )));
    }
    let mut data = vec![T::zero(); skel.len() * feature_dim];
    for (row, j) in data.chunks_mut(feature_dim).zip(skel.joints()) {
        let feats = sinusoid_features([j[0] as f64, j[1] as f64, j[2] as f64], freq_bands);
        for (dst, v) in row.iter_mut().zip(feats) {
            *dst = T::of(v);
        }
    }
    Tensor::new(vec![skel.len(), feature_dim], data)
}

/// One topology-aware attention unit applied to `x` (`N x F`).
pub fn grpe_attention_unit<T: Scalar>(
    g: &mut Graph<T>,
    p: &mut Binder<'_, T>,
    prefix: &str,
    x: Var,
    topo: &TopologyMatrices,
) -> Result<Var, NnError> {
    let (n, f) = g.value(x).rows_cols();
    if n != topo.len() {
        return Err(NnError::ShapeMismatch(format!(
            "{n} joint tokens but topology for {} joints",
            topo.len()
        )));
    }
    let q = layers::linear(g, p, &format!("{prefix}.q"), x)?;
    let k = layers::linear(g, p, &format!("{prefix}.k"), x)?;
    let v = layers::linear(g, p, &format!("{prefix}.v"), x)?;
    let cb = |name: &str| format!("{prefix}.codebook.{name}");
    let (dq, dk, dv) = (p.var(g, &cb("dist_q"))?, p.var(g, &cb("dist_k"))?, p.var(g, &cb("dist_v"))?);
    let (rq, rk, rv) = (p.var(g, &cb("rel_q"))?, p.var(g, &cb("rel_k"))?, p.var(g, &cb("rel_v"))?);

    let dist_bias = g.relative_bias(q, k, dq, dk, topo.distances())?;
    let rel_bias = g.relative_bias(q, k, rq, rk, topo.relations())?;
    let score_bias = g.add(dist_bias, rel_bias)?;
    let dist_val = g.embedding(dv, topo.distances(), &[n, n])?;
    let rel_val = g.embedding(rv, topo.relations(), &[n, n])?;
    let value_bias = g.add(dist_val, rel_val)?;

    let scale = T::one() / T::of(f as f64).sqrt();
    let z = g.attention(q, k, v, 1, scale, Some(score_bias), Some(value_bias))?;
    layers::linear(g, p, &format!("{prefix}.out"), z)
}

/// Records the full encoder on `g` and returns the `N x F` joint tokens.
pub fn encode_skeleton_graph<T: Scalar>(
    g: &mut Graph<T>,
    p: &mut Binder<'_, T>,
    cfg: &ModelConfig,
    skel: &Skeleton,
) -> Result<Var, NnError> {
    let topo = TopologyMatrices::new(skel, cfg.d_max).map_err(|e| NnError::Config(e.to_string()))?;
    let mut x = g.constant(embed_joints(skel, cfg.freq_bands, cfg.feature_dim)?);
    for u in 0..cfg.n_encoder_units {
        let pre = unit_prefix(u);
        let h = layers::layer_norm(g, p, &format!("{pre}.norm_attn"), x, cfg.ln_eps)?;
        let a = grpe_attention_unit(g, p, &format!("{pre}.attn"), h, &topo)?;
        x = g.add(x, a)?;
        let h = layers::layer_norm(g, p, &format!("{pre}.norm_ffn"), x, cfg.ln_eps)?;
        let h = layers::ffn(g, p, &format!("{pre}.ffn"), h)?;
        x = g.add(x, h)?;
    }
    Ok(x)
}

/// Inference-only encoding of a skeleton into `N x F` tokens.
pub fn encode_skeleton<T: Scalar>(params: &ParamStore<T>, cfg: &ModelConfig, skel: &Skeleton) -> Result<Tensor<T>, NnError> {
    let mut g = Graph::new();
    let mut p = Binder::new(params, false);
    let out = encode_skeleton_graph(&mut g, &mut p, cfg, skel)?;
    Ok(g.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::count_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_joints_give_identical_tokens() {
        let s = Skeleton::new(vec![[0.1, 0.2, -0.3], [0.1, 0.2, -0.3]], &[-1, 0]).unwrap();
        let t = embed_joints::<f64>(&s, 4, 32).unwrap();
        assert_eq!(t.data()[..32], t.data()[32..]);
    }

    #[test]
    fn parameter_count_matches_accounting() {
        for (f, d_max) in [(8, 5), (16, 3), (24, 7)] {
            let cfg = ModelConfig {
                feature_dim: f,
                n_heads: 2,
                freq_bands: 1,
                d_max,
                ..ModelConfig::default()
            };
            let store = init_params::<f64, _>(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            assert_eq!(store.count(|_, p| !p.frozen), count_params(&cfg).encoder_total());
        }
    }
}
