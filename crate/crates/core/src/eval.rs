//! Test metrics and closed-loop rollouts.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{invalid, KanError, Result};
use crate::network::GatedKan;
use crate::scalar::Real;

pub use crate::report::{ExperimentReport, ExperimentRow, RowStatus};

pub const DEFAULT_HORIZON: usize = 500;

fn check_shapes(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<()> {
    if pred.dim() != target.dim() {
        return Err(invalid(format!(
            "prediction shape {:?} does not match target shape {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    Ok(())
}

/// Pooled coefficient of determination: one SS ratio over every entry, with
/// deviations taken from per-column target means.
pub fn r_squared(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<f64> {
    check_shapes(pred, target)?;
    if target.nrows() < 2 {
        return Err(KanError::UndefinedMetric("R² needs at least two rows".into()));
    }
    let means = target.mean_axis(Axis(0)).expect("nonempty");
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for ((p, t), c) in pred.iter().zip(target.iter()).zip((0..target.ncols()).cycle()) {
        ss_res += (t - p) * (t - p);
        ss_tot += (t - means[c]) * (t - means[c]);
    }
    if ss_tot == 0.0 {
        return Err(KanError::UndefinedMetric("R² of a constant target".into()));
    }
    Ok(1.0 - ss_res / ss_tot)
}

pub fn rmse(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<f64> {
    check_shapes(pred, target)?;
    if pred.is_empty() {
        return Err(KanError::UndefinedMetric("RMSE of an empty set".into()));
    }
    let sse: f64 = pred.iter().zip(target.iter()).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

/// Anything that maps a batch of inputs to a batch of outputs.
pub trait Predictor {
    fn predict_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>>;
}

impl<T: Real> Predictor for GatedKan<T> {
    fn predict_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let xt = x.mapv(T::lit);
        Ok(self.predict(xt.view())?.mapv(|v| v.as_f64()))
    }
}

impl<F> Predictor for F
where
    F: Fn(ArrayView2<f64>) -> Result<Array2<f64>>,
{
    fn predict_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self(x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    /// Predicted states after `x0`, one per row; shorter than requested when diverged.
    pub states: Array2<f64>,
    pub diverged: bool,
}

/// Feeds predictions back as inputs for `steps` steps.
pub fn rollout(model: &impl Predictor, x0: &[f64], steps: usize) -> Result<Rollout> {
    let d = x0.len();
    let mut states = Vec::with_capacity(steps * d);
    let mut current = Array2::from_shape_vec((1, d), x0.to_vec()).map_err(|e| invalid(e.to_string()))?;
    let mut diverged = false;
    for _ in 0..steps {
        let next = match model.predict_batch(current.view()) {
            Ok(next) => next,
            Err(KanError::Overflow { .. }) => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        if next.dim() != (1, d) {
            return Err(invalid(format!(
                "rollout needs a model mapping {d} states to {d} states, got output {:?}",
                next.dim()
            )));
        }
        if next.iter().any(|v| !v.is_finite()) {
            diverged = true;
            break;
        }
        states.extend(next.iter().copied());
        current = next;
    }
    let n = states.len() / d;
    Ok(Rollout {
        states: Array2::from_shape_vec((n, d), states).expect("rollout shape"),
        diverged,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MultistepResult {
    /// RMSE over the finite prefix, `None` if the first step already diverged.
    pub rmse: Option<f64>,
    pub steps_used: usize,
    pub diverged: bool,
}

/// Rolls out from `trajectory[0]` and compares against `trajectory[1..=horizon]`.
pub fn multistep_rmse(model: &impl Predictor, trajectory: ArrayView2<f64>, horizon: usize) -> Result<MultistepResult> {
    if trajectory.nrows() <= horizon {
        return Err(invalid(format!(
            "trajectory of {} states is too short for horizon {horizon}",
            trajectory.nrows()
        )));
    }
    if horizon == 0 {
        return Err(invalid("horizon must be positive"));
    }
    let x0 = trajectory.row(0).to_vec();
    let r = rollout(model, &x0, horizon)?;
    let n = r.states.nrows();
    let rmse = if n == 0 {
        None
    } else {
        Some(rmse(r.states.view(), trajectory.slice(ndarray::s![1..=n, ..]))?)
    };
    Ok(MultistepResult {
        rmse,
        steps_used: n,
        diverged: r.diverged,
    })
}
