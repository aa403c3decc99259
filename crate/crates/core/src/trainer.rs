//! Mini-batch Adam training under the description-length objective, with
//! warm-up phases, scheduled grid refits and decisiveness-based early stopping.

use std::fmt;
use std::str::FromStr;

use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{stream_rng, Problem, ProblemKind};
use crate::error::{invalid, KanError, Result};
use crate::eval::{multistep_rmse, r_squared, rmse, Predictor};
use crate::gate::{GateBank, OPEN_LOGIT};
use crate::network::{EdgeKind, GateValues, GatedKan, KanConfig, KanShape};
use crate::objective::{complexity_grad, complexity_loss, data_loss, data_loss_grad, MdlConfig};
use crate::optim::{Adam, AdamParams};
use crate::report::{ExperimentRow, RowStatus};
use crate::scalar::Real;

pub const INIT_STREAM: u64 = 0;
pub const SHUFFLE_STREAM: u64 = 1;
pub const GATE_STREAM: u64 = 2;

const RELATIVE_IMPROVEMENT: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridUpdateSchedule {
    pub count: usize,
    pub within_epochs: usize,
}

impl Default for GridUpdateSchedule {
    fn default() -> Self {
        Self {
            count: 10,
            within_epochs: 50,
        }
    }
}

impl GridUpdateSchedule {
    pub fn none() -> Self {
        Self {
            count: 0,
            within_epochs: 0,
        }
    }

    /// Evenly spaced 1-based epochs starting at the first: 10 within 50 gives 1, 6, ..., 46.
    pub fn epochs(&self) -> Vec<usize> {
        if self.count == 0 || self.within_epochs == 0 {
            return Vec::new();
        }
        let count = self.count.min(self.within_epochs);
        let stride = self.within_epochs / count;
        (0..count).map(|i| 1 + i * stride).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    pub enabled: bool,
    pub decisiveness_threshold: f64,
    /// `None` means `min(500, ceil(0.05 * epochs))`.
    pub patience: Option<usize>,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self {
            enabled: true,
            decisiveness_threshold: 0.99,
            patience: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_epochs: usize,
    pub fc_warmup_epochs: usize,
    pub grid_updates: GridUpdateSchedule,
    pub early_stop: EarlyStop,
    pub seed: u64,
    pub adam: AdamParams,
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            epochs,
            batch_size,
            lr: 1e-3,
            warmup_epochs: 200,
            fc_warmup_epochs: 100,
            grid_updates: GridUpdateSchedule::default(),
            early_stop: EarlyStop::default(),
            seed,
            adam: AdamParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(invalid("epochs and batch_size must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.warmup_epochs + self.fc_warmup_epochs > self.epochs {
            return Err(invalid(format!(
                "warm-up ({} + {} epochs) exceeds the {} training epochs",
                self.warmup_epochs, self.fc_warmup_epochs, self.epochs
            )));
        }
        let thr = self.early_stop.decisiveness_threshold;
        if !(thr > 0.5 && thr <= 1.0) {
            return Err(invalid(format!("decisiveness threshold must lie in (0.5, 1], got {thr}")));
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(invalid("Adam needs betas in [0, 1) and eps > 0"));
        }
        Ok(())
    }

    pub fn patience(&self) -> usize {
        self.early_stop
            .patience
            .unwrap_or_else(|| 500.min((self.epochs as f64 * 0.05).ceil() as usize))
    }
}

/// The four cells of the FC x gates experiment grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    Baseline,
    FcOnly,
    GatesOnly,
    Full,
}

impl Condition {
    pub const ALL: [Condition; 4] = [Self::Baseline, Self::FcOnly, Self::GatesOnly, Self::Full];

    pub fn use_fc(self) -> bool {
        matches!(self, Self::FcOnly | Self::Full)
    }

    pub fn use_gates(self) -> bool {
        matches!(self, Self::GatesOnly | Self::Full)
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::FcOnly => "fc-only",
            Self::GatesOnly => "gates-only",
            Self::Full => "full",
        }
    }

    pub fn spec(self, beta: f64, gate_init_logit: f64) -> ConditionSpec {
        ConditionSpec {
            use_fc: self.use_fc(),
            use_gates: self.use_gates(),
            beta,
            gate_init_logit,
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Condition {
    type Err = KanError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        match key.as_str() {
            "baseline" => Ok(Self::Baseline),
            "fc-only" | "fc" => Ok(Self::FcOnly),
            "gates-only" | "gate-only" | "gates" => Ok(Self::GatesOnly),
            "full" => Ok(Self::Full),
            _ => Err(invalid(format!("unknown condition '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionSpec {
    pub use_fc: bool,
    pub use_gates: bool,
    /// Ignored when gates are off.
    pub beta: f64,
    pub gate_init_logit: f64,
}

impl ConditionSpec {
    pub fn condition(&self) -> Condition {
        match (self.use_fc, self.use_gates) {
            (false, false) => Condition::Baseline,
            (true, false) => Condition::FcOnly,
            (false, true) => Condition::GatesOnly,
            (true, true) => Condition::Full,
        }
    }

    pub fn effective_beta(&self) -> f64 {
        if self.use_gates {
            self.beta
        } else {
            0.0
        }
    }

    /// Network configuration for this condition. Ungated conditions freeze
    /// every edge gate open.
    pub fn kan_config<T: Real>(&self, widths: &[usize]) -> Result<KanConfig<T>> {
        if !self.gate_init_logit.is_finite() || !self.beta.is_finite() || self.beta < 0.0 {
            return Err(invalid("condition needs a finite gate logit and beta >= 0"));
        }
        let mut cfg = KanConfig::new(KanShape::new(widths, self.use_fc)?);
        if self.use_gates {
            cfg.egate_init = T::lit(self.gate_init_logit);
            cfg.egates_trainable = true;
        } else {
            cfg.egate_init = T::lit(OPEN_LOGIT);
            cfg.egates_trainable = false;
        }
        Ok(cfg)
    }
}

/// One line of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean mini-batch MSE over the epoch.
    pub data_loss: f64,
    /// Expected complexity `C` after the epoch.
    pub complexity_loss: f64,
    /// Mean mini-batch objective with the epoch's effective beta.
    pub total: f64,
    /// `None` without trainable gates.
    pub decisiveness: Option<f64>,
    pub trunk_active: usize,
    pub fc_active: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
    pub stopped_early: bool,
}

impl History {
    pub fn epochs_run(&self) -> usize {
        self.records.len()
    }
}

fn trainable_decisiveness<T: Real>(net: &GatedKan<T>) -> Result<Option<f64>> {
    let banks: Vec<&GateBank<T>> = std::iter::once(&net.egates)
        .chain(net.ngates.as_ref())
        .filter(|b| b.trainable && !b.is_empty())
        .collect();
    if banks.is_empty() {
        return Ok(None);
    }
    let mut sum = 0.0;
    let mut n = 0;
    for b in banks {
        sum += b.decisiveness()?.as_f64() * b.len() as f64;
        n += b.len();
    }
    Ok(Some(sum / n as f64))
}

fn check_data<T: Real>(net: &GatedKan<T>, x: ArrayView2<T>, y: ArrayView2<T>) -> Result<()> {
    if x.nrows() == 0 {
        return Err(invalid("training data is empty"));
    }
    if x.nrows() != y.nrows() {
        return Err(invalid(format!("{} input rows but {} target rows", x.nrows(), y.nrows())));
    }
    let shape = net.shape();
    if x.ncols() != shape.input_dim() || y.ncols() != shape.output_dim() {
        return Err(invalid(format!(
            "data dims ({}, {}) do not match network dims ({}, {})",
            x.ncols(),
            y.ncols(),
            shape.input_dim(),
            shape.output_dim()
        )));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(invalid("training data contains non-finite values"));
    }
    Ok(())
}

/// Trains `net` in place of a copy and returns it with its history.
pub fn train<T: Real>(
    net: GatedKan<T>,
    x: ArrayView2<T>,
    y: ArrayView2<T>,
    cfg: &TrainConfig,
    cond: &ConditionSpec,
) -> Result<(GatedKan<T>, History)> {
    train_with(net, x, y, cfg, cond, |_| {})
}

/// As [`train`], calling `on_epoch` after every epoch.
pub fn train_with<T: Real>(
    mut net: GatedKan<T>,
    x: ArrayView2<T>,
    y: ArrayView2<T>,
    cfg: &TrainConfig,
    cond: &ConditionSpec,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(GatedKan<T>, History)> {
    cfg.validate()?;
    net.validate()?;
    check_data(&net, x, y)?;

    let n = x.nrows();
    let mdl = MdlConfig::unit(&net, T::lit(cond.effective_beta()), n.max(2));
    let full_weight = mdl.complexity_weight()?;
    let layout = net.param_layout();
    let mut adam = Adam::new(layout.len(), T::lit(cfg.lr), cfg.adam);

    let mut base_frozen = vec![false; layout.len()];
    let fc_mask: Vec<bool> = net.edge_kinds().iter().map(|k| *k == EdgeKind::Fc).collect();
    if !net.egates.trainable {
        base_frozen[layout.egate_start()..layout.ngate_start()].fill(true);
    }
    if let Some(bank) = &net.ngates {
        if !bank.trainable {
            base_frozen[layout.ngate_start()..].fill(true);
        }
    }
    let mut warm_frozen = base_frozen.clone();
    for (e, is_fc) in fc_mask.iter().enumerate() {
        if *is_fc {
            warm_frozen[layout.egate_start() + e] = true;
        }
    }
    let has_trainable_gates = net.egates.trainable || net.ngates.as_ref().is_some_and(|b| b.trainable);

    let grid_epochs = cfg.grid_updates.epochs();
    let fc_release = cfg.warmup_epochs + cfg.fc_warmup_epochs;
    let patience = cfg.patience();
    let mut shuffle_rng = stream_rng(cfg.seed, SHUFFLE_STREAM);
    let mut gate_rng = stream_rng(cfg.seed, GATE_STREAM);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = History::default();
    let mut best = f64::INFINITY;
    let mut best_epoch = 0;

    for epoch in 1..=cfg.epochs {
        if grid_epochs.contains(&epoch) {
            net.update_grids(x, &GateValues::threshold(&net))?;
        }
        let weight = if epoch <= cfg.warmup_epochs { T::zero() } else { full_weight };
        let frozen = if epoch <= fc_release { &warm_frozen } else { &base_frozen };
        order.shuffle(&mut shuffle_rng);

        let mut data_sum = 0.0;
        let mut total_sum = 0.0;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let xb = x.select(Axis(0), idx);
            let yb = y.select(Axis(0), idx);
            let gates = GateValues::sample(&net, &mut gate_rng);
            let (pred, cache) = net.forward(xb.view(), &gates)?;
            let loss = data_loss(pred.view(), yb.view())?;
            let upstream = data_loss_grad(pred.view(), yb.view())?;
            let mut grads = net.backward(&cache, upstream.view())?;
            let mut total = loss;
            if weight > T::zero() {
                total += weight * complexity_loss(&net, &mdl)?;
                let (d_edge, d_node) = complexity_grad(&net, &mdl)?;
                for (g, d) in grads.egate_logits_mut().iter_mut().zip(d_edge) {
                    *g += weight * d;
                }
                for (g, d) in grads.ngate_logits_mut().iter_mut().zip(d_node) {
                    *g += weight * d;
                }
            }
            if !total.is_finite() || grads.flat.iter().any(|g| !g.is_finite()) {
                return Err(KanError::NonFiniteLoss { epoch, batch });
            }
            adam.step(&mut net, &grads, frozen);
            let rows = idx.len() as f64;
            data_sum += loss.as_f64() * rows;
            total_sum += total.as_f64() * rows;
        }

        let counts = net.active_counts();
        let record = EpochRecord {
            epoch,
            data_loss: data_sum / n as f64,
            complexity_loss: complexity_loss(&net, &mdl)?.as_f64(),
            total: total_sum / n as f64,
            decisiveness: trainable_decisiveness(&net)?,
            trunk_active: counts.trunk,
            fc_active: counts.fc,
        };
        on_epoch(&record);
        if epoch % 500 == 0 || epoch == cfg.epochs {
            log::debug!(
                "epoch {epoch}: data {:.3e} total {:.3e} active {}+{}",
                record.data_loss,
                record.total,
                record.trunk_active,
                record.fc_active
            );
        }

        // the objective changes when beta switches on, so improvement is tracked from there
        if epoch == cfg.warmup_epochs + 1 {
            best = f64::INFINITY;
        }
        if record.total < best - RELATIVE_IMPROVEMENT * best.abs() {
            best = record.total;
            best_epoch = epoch;
        }
        let decisive = record
            .decisiveness
            .is_some_and(|d| d > cfg.early_stop.decisiveness_threshold);
        history.records.push(record);
        if cfg.early_stop.enabled
            && has_trainable_gates
            && epoch > fc_release
            && decisive
            && epoch - best_epoch >= patience
        {
            history.stopped_early = true;
            break;
        }
    }
    Ok((net, history))
}

/// A trained cell of the experiment grid.
#[derive(Clone, Debug)]
pub struct Evaluation<T> {
    pub row: ExperimentRow,
    pub net: GatedKan<T>,
    pub history: History,
}

/// Builds the network for `spec`, trains it on the problem's training split
/// and scores it on the test split with threshold gates.
pub fn evaluate_condition<T: Real>(
    problem: &Problem,
    widths: &[usize],
    spec: &ConditionSpec,
    cfg: &TrainConfig,
    multistep_horizon: Option<usize>,
) -> Result<Evaluation<T>> {
    if widths.first() != Some(&problem.input_dim()) || widths.last() != Some(&problem.output_dim()) {
        return Err(invalid(format!(
            "widths {widths:?} do not match problem dims ({}, {})",
            problem.input_dim(),
            problem.output_dim()
        )));
    }
    if multistep_horizon.is_some() && problem.kind != ProblemKind::Dynamical {
        return Err(invalid("multi-step evaluation needs a dynamical problem"));
    }
    let kan_cfg = spec.kan_config::<T>(widths)?;
    let mut init_rng = stream_rng(cfg.seed, INIT_STREAM);
    let net = GatedKan::init(&kan_cfg, &mut init_rng)?;
    let xt = problem.train_x.mapv(T::lit);
    let yt = problem.train_y.mapv(T::lit);
    let (net, history) = train(net, xt.view(), yt.view(), cfg, spec)?;

    let pred = net.predict_batch(problem.test_x.view())?;
    let r2 = r_squared(pred.view(), problem.test_y.view()).ok();
    let rmse_1step = Some(rmse(pred.view(), problem.test_y.view())?);
    let (rmse_multistep, multistep_diverged) = match multistep_horizon {
        Some(h) => {
            let traj = problem.test_trajectory().expect("dynamical problem");
            let ms = multistep_rmse(&net, traj.view(), h)?;
            (ms.rmse, ms.diverged)
        }
        None => (None, false),
    };
    let counts = net.active_counts();
    let (trunk_total, fc_total) = net.shape().edge_counts();
    let row = ExperimentRow {
        problem: problem.name.clone(),
        condition: spec.condition().label().to_string(),
        beta: spec.effective_beta(),
        r2,
        rmse_1step,
        rmse_multistep,
        multistep_diverged,
        trunk_active: counts.trunk,
        fc_active: spec.use_fc.then_some(counts.fc),
        total_edges: trunk_total + fc_total,
        sparsity_pct: counts.sparsity_pct,
        epochs: history.epochs_run(),
        seed: cfg.seed,
        status: RowStatus::Ok,
        error: None,
        config_hash: None,
    };
    Ok(Evaluation { row, net, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn quick_cfg(epochs: usize) -> TrainConfig {
        let mut cfg = TrainConfig::new(epochs, 16, 7);
        cfg.warmup_epochs = 0;
        cfg.fc_warmup_epochs = 0;
        cfg.grid_updates = GridUpdateSchedule::none();
        cfg
    }

    fn toy_data(n: usize) -> (Array2<f64>, Array2<f64>) {
        let x = Array2::from_shape_fn((n, 2), |(r, c)| ((r * 7 + c * 3) % 17) as f64 / 8.5 - 1.0);
        let y = Array2::from_shape_fn((n, 1), |(r, _)| (x[(r, 0)] + x[(r, 1)] * x[(r, 1)]).sin());
        (x, y)
    }

    fn toy_net(spec: &ConditionSpec, widths: &[usize]) -> GatedKan<f64> {
        let cfg = spec.kan_config::<f64>(widths).unwrap();
        GatedKan::init(&cfg, &mut stream_rng(0, INIT_STREAM)).unwrap()
    }

    #[test]
    fn grid_update_epochs() {
        assert_eq!(GridUpdateSchedule::default().epochs(), vec![1, 6, 11, 16, 21, 26, 31, 36, 41, 46]);
        assert!(GridUpdateSchedule::none().epochs().is_empty());
        assert_eq!(GridUpdateSchedule { count: 3, within_epochs: 2 }.epochs(), vec![1, 2]);
    }

    #[test]
    fn default_patience() {
        assert_eq!(TrainConfig::new(4000, 128, 0).patience(), 200);
        assert_eq!(TrainConfig::new(20000, 128, 0).patience(), 500);
        assert_eq!(TrainConfig::new(301, 128, 0).patience(), 16);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::new(300, 128, 0).validate().is_ok());
        assert!(TrainConfig::new(299, 128, 0).validate().is_err());
        assert!(TrainConfig::new(300, 0, 0).validate().is_err());
        let mut c = TrainConfig::new(300, 8, 0);
        c.early_stop.decisiveness_threshold = 0.5;
        assert!(c.validate().is_err());
        c.early_stop.decisiveness_threshold = 1.0;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn condition_parsing() {
        for c in Condition::ALL {
            assert_eq!(c.label().parse::<Condition>().unwrap(), c);
            assert_eq!(c.spec(0.1, -1.0).condition(), c);
        }
        assert!("both".parse::<Condition>().is_err());
        assert_eq!(Condition::Baseline.spec(0.3, -1.0).effective_beta(), 0.0);
    }

    #[test]
    fn descends_on_zero_target() {
        let spec = Condition::Baseline.spec(0.0, OPEN_LOGIT);
        let net = toy_net(&spec, &[2, 3, 1]);
        let (x, _) = toy_data(64);
        let y = Array2::zeros((64, 1));
        let initial = data_loss(net.predict(x.view()).unwrap().view(), y.view()).unwrap();
        let (net, hist) = train(net, x.view(), y.view(), &quick_cfg(50), &spec).unwrap();
        let fin = data_loss(net.predict(x.view()).unwrap().view(), y.view()).unwrap();
        assert!(fin < initial, "{fin} >= {initial}");
        assert_eq!(hist.epochs_run(), 50);
        assert!(hist.records.iter().all(|r| r.decisiveness.is_none() && r.complexity_loss > 0.0));
    }

    #[test]
    fn runs_are_deterministic() {
        let spec = Condition::Full.spec(0.1, -1.0);
        let (x, y) = toy_data(50);
        let mut cfg = quick_cfg(6);
        cfg.warmup_epochs = 2;
        cfg.fc_warmup_epochs = 2;
        cfg.grid_updates = GridUpdateSchedule { count: 2, within_epochs: 4 };
        let a = train(toy_net(&spec, &[2, 2, 1]), x.view(), y.view(), &cfg, &spec).unwrap();
        let b = train(toy_net(&spec, &[2, 2, 1]), x.view(), y.view(), &cfg, &spec).unwrap();
        assert_eq!(a.1, b.1);
        assert_eq!(a.0, b.0);
        cfg.seed += 1;
        let c = train(toy_net(&spec, &[2, 2, 1]), x.view(), y.view(), &cfg, &spec).unwrap();
        assert_ne!(a.1, c.1);
    }

    #[test]
    fn fc_gate_logits_held_during_warmup() {
        let spec = Condition::Full.spec(0.5, -1.0);
        let net = toy_net(&spec, &[2, 2, 1]);
        let kinds = net.edge_kinds();
        let (x, y) = toy_data(40);
        let mut cfg = quick_cfg(5);
        cfg.warmup_epochs = 2;
        cfg.fc_warmup_epochs = 3;
        let (trained, _) = train(net.clone(), x.view(), y.view(), &cfg, &spec).unwrap();
        for (e, k) in kinds.iter().enumerate() {
            let moved = trained.egates.logits[e] != net.egates.logits[e];
            assert_eq!(moved, *k == EdgeKind::Trunk, "edge {e} {k:?}");
        }
    }

    #[test]
    fn baseline_gates_never_move() {
        let spec = Condition::FcOnly.spec(0.5, -1.0);
        let net = toy_net(&spec, &[2, 2, 1]);
        assert!(net.egates.logits.iter().all(|l| *l == OPEN_LOGIT));
        let (x, y) = toy_data(40);
        let (trained, _) = train(net.clone(), x.view(), y.view(), &quick_cfg(3), &spec).unwrap();
        assert_eq!(trained.egates, net.egates);
        assert_eq!(trained.active_counts().sparsity_pct, 100.0);
    }

    #[test]
    fn early_stop_waits_for_warmup() {
        let spec = Condition::GatesOnly.spec(1.0, 12.0);
        let (x, y) = toy_data(32);
        let mut cfg = quick_cfg(40);
        cfg.warmup_epochs = 10;
        cfg.fc_warmup_epochs = 5;
        cfg.early_stop.patience = Some(1);
        cfg.early_stop.decisiveness_threshold = 0.9;
        let (_, hist) = train(toy_net(&spec, &[2, 2, 1]), x.view(), y.view(), &cfg, &spec).unwrap();
        assert!(hist.epochs_run() > 15);
        assert!(hist.stopped_early);
        cfg.early_stop.enabled = false;
        let (_, hist) = train(toy_net(&spec, &[2, 2, 1]), x.view(), y.view(), &cfg, &spec).unwrap();
        assert_eq!(hist.epochs_run(), 40);
        assert!(!hist.stopped_early);
    }

    #[test]
    fn warmup_has_no_complexity_pressure() {
        // with the data pathway cut (zero targets, zero outputs impossible), compare
        // gate-logit gradients: during warm-up they come from data only
        let spec = Condition::GatesOnly.spec(10.0, -1.0);
        let net = toy_net(&spec, &[2, 2, 1]);
        let (x, y) = toy_data(16);
        let mut cfg = quick_cfg(1);
        cfg.batch_size = 16;
        cfg.warmup_epochs = 1;
        let (warm, _) = train(net.clone(), x.view(), y.view(), &cfg, &spec).unwrap();
        let beta0 = Condition::GatesOnly.spec(0.0, -1.0);
        cfg.warmup_epochs = 0;
        let (plain, _) = train(net, x.view(), y.view(), &cfg, &beta0).unwrap();
        assert_eq!(warm.egates.logits, plain.egates.logits);
    }

    #[test]
    fn rejects_bad_data() {
        let spec = Condition::Baseline.spec(0.0, OPEN_LOGIT);
        let net = toy_net(&spec, &[2, 2, 1]);
        let cfg = quick_cfg(1);
        let empty = Array2::<f64>::zeros((0, 2));
        assert!(train(net.clone(), empty.view(), Array2::zeros((0, 1)).view(), &cfg, &spec).is_err());
        let (mut x, y) = toy_data(8);
        assert!(train(net.clone(), x.view(), Array2::zeros((8, 2)).view(), &cfg, &spec).is_err());
        x[(0, 0)] = f64::NAN;
        assert!(train(net, x.view(), y.view(), &cfg, &spec).is_err());
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let spec = Condition::Baseline.spec(0.0, OPEN_LOGIT);
        let mut net = toy_net(&spec, &[2, 2, 1]);
        net.edge_mut(0).w_b = f64::MAX;
        let (x, y) = toy_data(40);
        match train(net, x.view(), y.view(), &quick_cfg(2), &spec) {
            Err(KanError::NonFiniteLoss { epoch: 1, batch: 0 }) | Err(KanError::Overflow { .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn evaluates_a_cell() {
        let problem = crate::data::gen_symbolic(crate::data::SymbolicId::F1, 64, 32, 0).unwrap();
        let spec = Condition::Full.spec(0.1, -1.0);
        let mut cfg = quick_cfg(3);
        cfg.grid_updates = GridUpdateSchedule { count: 1, within_epochs: 1 };
        let ev = evaluate_condition::<f64>(&problem, &[1, 2, 1], &spec, &cfg, None).unwrap();
        assert_eq!(ev.row.condition, "full");
        assert_eq!(ev.row.total_edges, 5);
        assert_eq!(ev.row.recomputed_sparsity(), ev.row.sparsity_pct);
        assert_eq!(ev.row.epochs, 3);
        assert!(ev.row.fc_active.is_some());
        assert!(evaluate_condition::<f64>(&problem, &[2, 1], &spec, &cfg, None).is_err());
        assert!(evaluate_condition::<f64>(&problem, &[1, 1], &spec, &cfg, Some(5)).is_err());
        let ev32 = evaluate_condition::<f32>(&problem, &[1, 2, 1], &spec, &cfg, None).unwrap();
        assert!(ev32.row.rmse_1step.unwrap().is_finite());
    }
}
