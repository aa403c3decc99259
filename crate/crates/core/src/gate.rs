//! Hard-concrete gates.
//!
//! A gate with logit `alpha` is sampled as
//! `s = sigmoid((logit(u) + alpha) / tau)`, stretched to `s (zeta - gamma) + gamma`
//! and clamped to `[0, 1]`. The probability that a sample is nonzero has the
//! closed form `sigmoid(alpha - tau * ln(-gamma / zeta))`; this "expected
//! openness" drives both the complexity penalty and the inference threshold.

use rand::Rng;
use rand_distr::{Distribution, Open01};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::{sigmoid, Real};

/// Logit used to hold a gate open in ungated conditions.
pub const OPEN_LOGIT: f64 = 20.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateParams<T> {
    pub tau: T,
    pub gamma: T,
    pub zeta: T,
}

impl<T: Real> Default for GateParams<T> {
    fn default() -> Self {
        Self {
            tau: T::lit(2.0 / 3.0),
            gamma: T::lit(-0.1),
            zeta: T::lit(1.1),
        }
    }
}

impl<T: Real> GateParams<T> {
    pub fn new(tau: T, gamma: T, zeta: T) -> Result<Self> {
        let p = Self { tau, gamma, zeta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > T::zero() && self.gamma < T::zero() && self.zeta > T::one()) {
            return Err(invalid(format!(
                "gate params need tau > 0, gamma < 0 < 1 < zeta (got {}, {}, {})",
                self.tau, self.gamma, self.zeta
            )));
        }
        Ok(())
    }

    /// `tau * ln(-gamma / zeta)`: the logit at which a gate is open with probability 1/2.
    pub fn threshold_logit(&self) -> T {
        self.tau * (-self.gamma / self.zeta).ln()
    }

    /// `P(z > 0)`, the expected L0 contribution of one gate.
    #[inline]
    pub fn expected_open(&self, alpha: T) -> T {
        sigmoid(alpha - self.threshold_logit())
    }

    /// One reparameterized sample: the gate value and its derivative with respect to `alpha`.
    #[inline]
    pub fn sample(&self, alpha: T, u: T) -> (T, T) {
        let logit_u = u.ln() - (T::one() - u).ln();
        let s = sigmoid((logit_u + alpha) / self.tau);
        let stretched = s * (self.zeta - self.gamma) + self.gamma;
        if stretched <= T::zero() {
            (T::zero(), T::zero())
        } else if stretched >= T::one() {
            (T::one(), T::zero())
        } else {
            let slope = (self.zeta - self.gamma) * s * (T::one() - s) / self.tau;
            (stretched, slope)
        }
    }
}

/// Gate logits for one family of gated elements (edges or nodes).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateBank<T> {
    pub logits: Vec<T>,
    pub params: GateParams<T>,
    pub trainable: bool,
}

/// Sampled gate values plus the pathwise derivative `d value / d logit` for each gate.
#[derive(Clone, Debug, PartialEq)]
pub struct GateSample<T> {
    pub values: Vec<T>,
    pub dvalue_dlogit: Vec<T>,
}

impl<T: Real> GateSample<T> {
    /// All gates fully open with no gradient path.
    pub fn ones(n: usize) -> Self {
        Self {
            values: vec![T::one(); n],
            dvalue_dlogit: vec![T::zero(); n],
        }
    }

    pub fn from_values(values: Vec<T>) -> Self {
        let n = values.len();
        Self {
            values,
            dvalue_dlogit: vec![T::zero(); n],
        }
    }
}

impl<T: Real> GateBank<T> {
    pub fn new(len: usize, init_logit: T, params: GateParams<T>, trainable: bool) -> Self {
        Self {
            logits: vec![init_logit; len],
            params,
            trainable,
        }
    }

    /// Gates fixed open at `alpha = 20` with training disabled.
    pub fn frozen_open(len: usize, params: GateParams<T>) -> Self {
        Self::new(len, T::lit(OPEN_LOGIT), params, false)
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn sample_gates(&self, u: &[T]) -> Result<GateSample<T>> {
        if u.len() != self.logits.len() {
            return Err(invalid(format!(
                "{} uniforms for {} gates",
                u.len(),
                self.logits.len()
            )));
        }
        if let Some(bad) = u.iter().find(|&&v| !(v > T::zero() && v < T::one())) {
            return Err(invalid(format!("uniform draw {bad} outside (0, 1)")));
        }
        let (values, dvalue_dlogit) = self
            .logits
            .iter()
            .zip(u)
            .map(|(&a, &v)| self.params.sample(a, v))
            .unzip();
        Ok(GateSample {
            values,
            dvalue_dlogit,
        })
    }

    /// Draws fresh noise from `rng` and samples every gate.
    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> GateSample<T> {
        let u: Vec<T> = (0..self.len())
            .map(|_| {
                let v: f64 = Open01.sample(rng);
                // f32 rounding can land on 0 or 1
                let v = T::lit(v);
                v.max(T::min_positive_value()).min(T::one() - T::epsilon())
            })
            .collect();
        self.sample_gates(&u).expect("noise drawn inside (0, 1)")
    }

    pub fn expected_open(&self) -> Vec<T> {
        self.logits
            .iter()
            .map(|&a| self.params.expected_open(a))
            .collect()
    }

    /// `1[E[z] > 1/2]` for each gate.
    pub fn inference_gates_threshold(&self) -> Vec<bool> {
        self.expected_open()
            .into_iter()
            .map(|p| p > T::lit(0.5))
            .collect()
    }

    /// The original hard-concrete test-time estimator, `clamp(sigmoid(alpha)(zeta - gamma) + gamma, 0, 1)`.
    pub fn inference_gates_louizos(&self) -> Vec<T> {
        let p = &self.params;
        self.logits
            .iter()
            .map(|&a| {
                let v = sigmoid(a) * (p.zeta - p.gamma) + p.gamma;
                v.max(T::zero()).min(T::one())
            })
            .collect()
    }

    /// Mean over gates of `max(p, 1 - p)`, where `p` is the expected openness.
    pub fn decisiveness(&self) -> Result<T> {
        if self.is_empty() {
            return Err(invalid("decisiveness of an empty gate bank"));
        }
        let total: T = self
            .expected_open()
            .into_iter()
            .map(|p| p.max(T::one() - p))
            .sum();
        Ok(total / T::from_usize_lossy(self.len()))
    }
}
