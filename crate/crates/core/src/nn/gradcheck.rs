//! Central finite-difference verification of analytic gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use super::NnError;

/// Entries whose analytic and numeric gradients are both below this are
/// compared absolutely.
pub const GRAD_FLOOR: f64 = 1e-6;

/// Compares the analytic gradient of a random scalar projection of `f`
/// against `(p(x + eps) - p(x - eps)) / (2 eps)` for every input entry.
///
/// Returns the maximum of `|analytic - numeric| / max(|analytic|, |numeric|, GRAD_FLOOR)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], eps: f64, seed: u64) -> Result<f64, NnError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, NnError>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = f(&mut g, &vars)?;
    let weights = Tensor::<f64>::randn(g.value(out).shape(), 1.0, &mut rng).into_data();
    let loss = g.project(out, &weights)?;
    let grads = g.backward(loss)?;

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64, NnError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let out = f(&mut g, &vars)?;
        let loss = g.project(out, &weights)?;
        Ok(g.value(loss).data()[0])
    };

    let mut worst: f64 = 0.0;
    let mut work = inputs.to_vec();
    for (idx, var) in vars.iter().enumerate() {
        let zeros = vec![0.0; inputs[idx].len()];
        let analytic = grads.get(*var).unwrap_or(&zeros).to_vec();
        for e in 0..inputs[idx].len() {
            let orig = work[idx].data()[e];
            work[idx].data_mut()[e] = orig + eps;
            let plus = eval(&work)?;
            work[idx].data_mut()[e] = orig - eps;
            let minus = eval(&work)?;
            work[idx].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            if !numeric.is_finite() {
                return Err(NnError::NonFiniteGradient);
            }
            let a = analytic[e];
            let denom = a.abs().max(numeric.abs()).max(GRAD_FLOOR);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
