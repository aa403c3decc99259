//! Adam over the network's flat parameter vector.

use serde::{Deserialize, Serialize};

use crate::network::{GatedKan, Gradients};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter Adam state. A masked parameter keeps its moments and step
/// count untouched, as if it had no gradient that step.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    m: Vec<T>,
    v: Vec<T>,
    steps: Vec<i32>,
}

impl<T: Real> Adam<T> {
    pub fn new(len: usize, lr: T, params: AdamParams) -> Self {
        Self {
            lr,
            beta1: T::lit(params.beta1),
            beta2: T::lit(params.beta2),
            eps: T::lit(params.eps),
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            steps: vec![0; len],
        }
    }

    /// Applies one update. `frozen[i] == true` skips parameter `i`.
    pub fn step(&mut self, net: &mut GatedKan<T>, grads: &Gradients<T>, frozen: &[bool]) {
        debug_assert_eq!(grads.flat.len(), self.m.len());
        debug_assert_eq!(frozen.len(), self.m.len());
        let one = T::one();
        net.visit_params_mut(|i, p| {
            if frozen[i] {
                return;
            }
            let g = grads.flat[i];
            self.steps[i] += 1;
            let t = self.steps[i];
            self.m[i] = self.beta1 * self.m[i] + (one - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (one - self.beta2) * g * g;
            let m_hat = self.m[i] / (one - self.beta1.powi(t));
            let v_hat = self.v[i] / (one - self.beta2.powi(t));
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        });
    }
}
