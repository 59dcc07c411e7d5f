use std::collections::BTreeMap;

use super::params::ParamStore;
use super::tensor::Scalar;
use super::NnError;

/// Bias-corrected Adam. Gradients for frozen entries are discarded.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
    step: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_grad_norm: Some(1.0),
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Returns the pre-clip global gradient norm.
    pub fn step<T: Scalar>(
        &mut self,
        store: &mut ParamStore<T>,
        grads: &BTreeMap<String, Vec<T>>,
    ) -> Result<f64, NnError> {
        let mut sq = 0.0;
        for (name, g) in grads {
            if store.get(name)?.frozen {
                continue;
            }
            sq += g.iter().map(|v| v.f64() * v.f64()).sum::<f64>();
        }
        let norm = sq.sqrt();
        let clip = match self.max_grad_norm {
            Some(max) if norm > max => max / norm,
            _ => 1.0,
        };
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (name, g) in grads {
            if store.get(name)?.frozen {
                continue;
            }
            let tensor = store.tensor_mut(name)?;
            if tensor.len() != g.len() {
                return Err(NnError::ShapeMismatch(format!(
                    "gradient for `{name}` has {} entries, tensor {}",
                    g.len(),
                    tensor.len()
                )));
            }
            let m = self.first.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.second.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for (((w, gi), mi), vi) in tensor.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = gi.f64() * clip;
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let update = self.lr * (*mi / bc1) / ((*vi / bc2).sqrt() + self.eps);
                *w = T::of(w.f64() - update);
            }
        }
        Ok(norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    #[test]
    fn frozen_entries_untouched() {
        let mut store = ParamStore::<f32>::new();
        store.insert("backbone.w", Tensor::full(&[3], 1.0), true).unwrap();
        store.insert("adapter.w", Tensor::full(&[3], 1.0), false).unwrap();
        let before = store.content_hash("backbone.");
        let mut grads = BTreeMap::new();
        grads.insert("backbone.w".to_string(), vec![1.0f32; 3]);
        grads.insert("adapter.w".to_string(), vec![1.0f32; 3]);
        let mut adam = Adam::new(0.1);
        for _ in 0..5 {
            adam.step(&mut store, &grads).unwrap();
        }
        assert_eq!(before, store.content_hash("backbone."));
        assert!(store.tensor("adapter.w").unwrap().data()[0] < 1.0);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::<f64>::new();
        store.insert("x", Tensor::full(&[1], 3.0), false).unwrap();
        let mut adam = Adam::new(0.1);
        adam.max_grad_norm = None;
        for _ in 0..500 {
            let x = store.tensor("x").unwrap().data()[0];
            let mut grads = BTreeMap::new();
            grads.insert("x".to_string(), vec![2.0 * (x - 1.0)]);
            adam.step(&mut store, &grads).unwrap();
        }
        assert!((store.tensor("x").unwrap().data()[0] - 1.0).abs() < 1e-2);
    }
}
