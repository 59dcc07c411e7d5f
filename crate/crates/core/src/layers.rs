//! Named-parameter building blocks shared by the encoder, backbone and adapter.
//!
//! A linear layer at `prefix` owns `prefix.weight` (`in x out`) and
//! `prefix.bias`; a layer norm owns `prefix.scale` and `prefix.shift`.

use rand::Rng;

use crate::nn::{Binder, Graph, NnError, ParamStore, Scalar, Tensor, Var};

pub fn init_linear<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Result<(), NnError> {
    let std = 1.0 / (fan_in as f64).sqrt();
    store.insert(format!("{prefix}.weight"), Tensor::randn(&[fan_in, fan_out], std, rng), false)?;
    store.insert(format!("{prefix}.bias"), Tensor::zeros(&[fan_out]), false)
}

pub fn init_zero_linear<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, fan_in: usize, fan_out: usize) -> Result<(), NnError> {
    store.insert(format!("{prefix}.weight"), Tensor::zeros(&[fan_in, fan_out]), false)?;
    store.insert(format!("{prefix}.bias"), Tensor::zeros(&[fan_out]), false)
}

pub fn init_norm<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, dim: usize) -> Result<(), NnError> {
    store.insert(format!("{prefix}.scale"), Tensor::full(&[dim], T::one()), false)?;
    store.insert(format!("{prefix}.shift"), Tensor::zeros(&[dim]), false)
}

pub fn init_ffn<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    prefix: &str,
    dim: usize,
    hidden: usize,
    rng: &mut R,
) -> Result<(), NnError> {
    init_linear(store, &format!("{prefix}.fc1"), dim, hidden, rng)?;
    init_linear(store, &format!("{prefix}.fc2"), hidden, dim, rng)
}

pub fn linear<T: Scalar>(g: &mut Graph<T>, p: &mut Binder<'_, T>, prefix: &str, x: Var) -> Result<Var, NnError> {
    let w = p.var(g, &format!("{prefix}.weight"))?;
    let b = p.var(g, &format!("{prefix}.bias"))?;
    g.linear(x, w, b)
}

pub fn layer_norm<T: Scalar>(
    g: &mut Graph<T>,
    p: &mut Binder<'_, T>,
    prefix: &str,
    x: Var,
    eps: f64,
) -> Result<Var, NnError> {
    let s = p.var(g, &format!("{prefix}.scale"))?;
    let b = p.var(g, &format!("{prefix}.shift"))?;
    g.layer_norm(x, s, b, T::of(eps))
}

/// `fc2(gelu(fc1(x)))`.
pub fn ffn<T: Scalar>(g: &mut Graph<T>, p: &mut Binder<'_, T>, prefix: &str, x: Var) -> Result<Var, NnError> {
    let h = linear(g, p, &format!("{prefix}.fc1"), x)?;
    let h = g.gelu(h)?;
    linear(g, p, &format!("{prefix}.fc2"), h)
}

/// Sin/cos features of each coordinate at octaves `2^k π`, grouped per axis:
/// `[sin(π x), cos(π x), sin(2π x), cos(2π x), ..., sin(π y), ...]`.
pub fn sinusoid_features(coords: [f64; 3], bands: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(6 * bands);
    for c in coords {
        for k in 0..bands {
            let arg = (1u64 << k) as f64 * std::f64::consts::PI * c;
            out.push(arg.sin());
            out.push(arg.cos());
        }
    }
    out
}
