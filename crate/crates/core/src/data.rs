//! Benchmark problems: closed-form targets, chaotic maps and flows, and the
//! two tabular datasets.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, KanError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Static,
    Dynamical,
}

/// Per-feature standardization fitted on the training inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn fit(x: ArrayView2<f64>) -> Self {
        let n = x.nrows() as f64;
        let mean: Vec<f64> = x.axis_iter(Axis(1)).map(|c| c.sum() / n).collect();
        let std = x
            .axis_iter(Axis(1))
            .zip(&mean)
            .map(|(c, m)| {
                let s = (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        Array2::from_shape_fn(x.dim(), |(r, c)| (x[(r, c)] - self.mean[c]) / self.std[c])
    }

    pub fn invert(&self, x: &Array2<f64>) -> Array2<f64> {
        Array2::from_shape_fn(x.dim(), |(r, c)| x[(r, c)] * self.std[c] + self.mean[c])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Problem {
    pub name: String,
    pub train_x: Array2<f64>,
    pub train_y: Array2<f64>,
    pub test_x: Array2<f64>,
    pub test_y: Array2<f64>,
    pub kind: ProblemKind,
    /// Input standardization, when the inputs were standardized.
    pub normalization: Option<Normalization>,
    /// Rows dropped while loading (tabular sources only).
    pub rejected_rows: usize,
}

impl Problem {
    pub fn input_dim(&self) -> usize {
        self.train_x.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.train_y.ncols()
    }

    /// Consecutive test states `s_0, s_1, ..., s_n` for dynamical problems
    /// whose test pairs come from one contiguous orbit.
    pub fn test_trajectory(&self) -> Option<Array2<f64>> {
        if self.kind != ProblemKind::Dynamical || self.test_x.nrows() == 0 {
            return None;
        }
        let n = self.test_x.nrows();
        let d = self.test_x.ncols();
        Some(Array2::from_shape_fn((n + 1, d), |(r, c)| {
            if r < n {
                self.test_x[(r, c)]
            } else {
                self.test_y[(n - 1, c)]
            }
        }))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SymbolicId {
    Anecdote,
    F1,
    F2,
    F3,
    F4,
    F5,
    F6,
    F7,
    F8,
    F9,
    F10,
}

impl SymbolicId {
    pub const ALL: [SymbolicId; 11] = [
        Self::Anecdote,
        Self::F1,
        Self::F2,
        Self::F3,
        Self::F4,
        Self::F5,
        Self::F6,
        Self::F7,
        Self::F8,
        Self::F9,
        Self::F10,
    ];

    pub fn input_dim(self) -> usize {
        match self {
            Self::Anecdote | Self::F9 | Self::F10 => 2,
            _ => 1,
        }
    }

    /// Sampling box, the same interval for every input.
    pub fn domain(self) -> (f64, f64) {
        match self {
            Self::Anecdote => (-2.0, 2.0),
            Self::F7 => (0.0, 2.0),
            Self::F8 => (0.0, 4.0),
            Self::F10 => (-PI, PI),
            _ => (-1.0, 1.0),
        }
    }

    pub fn eval(self, v: &[f64]) -> f64 {
        let x = v[0];
        match self {
            Self::Anecdote => (x + v[1] * v[1]).sin(),
            Self::F1 => x.powi(3) + x.powi(2) + x,
            Self::F2 => x.powi(4) + x.powi(3) + x.powi(2) + x,
            Self::F3 => x.powi(5) + x.powi(4) + x.powi(3) + x.powi(2) + x,
            Self::F4 => x.powi(6) + x.powi(5) + x.powi(4) + x.powi(3) + x.powi(2) + x,
            Self::F5 => (x * x).sin() * x.cos() - 1.0,
            Self::F6 => x.sin() + (x + x * x).sin(),
            Self::F7 => (x + 1.0).ln() + (x * x + 1.0).ln(),
            Self::F8 => x.sqrt(),
            Self::F9 => x.sin() + (v[1] * v[1]).sin(),
            Self::F10 => 2.0 * x.sin() * v[1].cos(),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Anecdote => "anecdote",
            Self::F1 => "nguyen-f1",
            Self::F2 => "nguyen-f2",
            Self::F3 => "nguyen-f3",
            Self::F4 => "nguyen-f4",
            Self::F5 => "nguyen-f5",
            Self::F6 => "nguyen-f6",
            Self::F7 => "nguyen-f7",
            Self::F8 => "nguyen-f8",
            Self::F9 => "nguyen-f9",
            Self::F10 => "nguyen-f10",
        }
    }
}

impl fmt::Display for SymbolicId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SymbolicId {
    type Err = KanError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase();
        let key = key.trim_start_matches("nguyen-").trim_start_matches("nguyen_");
        Self::ALL
            .into_iter()
            .find(|id| id.label().trim_start_matches("nguyen-") == key)
            .ok_or_else(|| invalid(format!("unknown symbolic problem '{s}'")))
    }
}

/// Independent seeded streams so that e.g. data generation never shares draws with training.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) const DATA_STREAM: u64 = 10;

/// Uniform samples on the problem's domain, targets evaluated exactly.
pub fn gen_symbolic(id: SymbolicId, n_train: usize, n_test: usize, seed: u64) -> Result<Problem> {
    if n_train == 0 || n_test == 0 {
        return Err(invalid("symbolic problems need nonempty train and test sets"));
    }
    let mut rng = stream_rng(seed, DATA_STREAM);
    let (lo, hi) = id.domain();
    let d = id.input_dim();
    let mut draw = |n: usize| {
        let x = Array2::from_shape_fn((n, d), |_| rng.random_range(lo..=hi));
        let y = Array2::from_shape_fn((n, 1), |(r, _)| id.eval(x.row(r).as_slice().unwrap()));
        (x, y)
    };
    let (train_x, train_y) = draw(n_train);
    let (test_x, test_y) = draw(n_test);
    Ok(Problem {
        name: id.label().to_string(),
        train_x,
        train_y,
        test_x,
        test_y,
        kind: ProblemKind::Static,
        normalization: None,
        rejected_rows: 0,
    })
}

/// Parameters of the three-species food chain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EcosystemParams {
    pub k: f64,
    pub x_p: f64,
    pub y_p: f64,
    pub x_q: f64,
    pub y_q: f64,
    pub n0: f64,
    pub p0: f64,
}

impl Default for EcosystemParams {
    fn default() -> Self {
        Self {
            k: 0.98,
            x_p: 0.4,
            y_p: 2.009,
            x_q: 0.08,
            y_q: 2.876,
            n0: 0.16129,
            p0: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "system", rename_all = "lowercase")]
pub enum DynamicalSystem {
    Ikeda { mu: f64 },
    Ecosystem(EcosystemParams),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Integrator {
    /// Discrete map, one iteration per sample.
    Map,
    /// Classical RK4 with step `h`, sampled every `dt`.
    Rk4 { h: f64, dt: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicalSpec {
    pub system: DynamicalSystem,
    pub integrator: Integrator,
    /// Samples discarded before the first pair.
    pub transient_discard: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub initial_state: Vec<f64>,
}

impl DynamicalSpec {
    pub fn ikeda_default() -> Self {
        Self {
            system: DynamicalSystem::Ikeda { mu: 0.9 },
            integrator: Integrator::Map,
            transient_discard: 1000,
            n_train: 5000,
            n_test: 1000,
            initial_state: vec![0.1, 0.1],
        }
    }

    pub fn ecosystem_default() -> Self {
        Self {
            system: DynamicalSystem::Ecosystem(EcosystemParams::default()),
            integrator: Integrator::Rk4 { h: 0.01, dt: 0.1 },
            // 100 time units at dt = 0.1
            transient_discard: 1000,
            n_train: 5000,
            n_test: 1000,
            initial_state: vec![0.8, 0.2, 8.0],
        }
    }

    pub fn state_dim(&self) -> usize {
        match self.system {
            DynamicalSystem::Ikeda { .. } => 2,
            DynamicalSystem::Ecosystem(_) => 3,
        }
    }
}

pub const DIVERGENCE_LIMIT: f64 = 1e6;
pub const NEGATIVE_POPULATION_TOL: f64 = -1e-9;

pub fn ikeda_step(mu: f64, s: [f64; 2]) -> [f64; 2] {
    let [x, y] = s;
    let phi = 0.4 - 6.0 / (1.0 + x * x + y * y);
    let (sin, cos) = phi.sin_cos();
    [1.0 + mu * (x * cos - y * sin), mu * (x * sin + y * cos)]
}

pub fn ecosystem_rhs(p: &EcosystemParams, s: [f64; 3]) -> [f64; 3] {
    let [n, pp, q] = s;
    let graze = n / (n + p.n0);
    let prey = pp / (pp + p.p0);
    [
        n * (1.0 - n / p.k) - p.x_p * p.y_p * graze * pp,
        p.x_p * pp * (p.y_p * graze - 1.0) - p.x_q * p.y_q * prey * q,
        p.x_q * q * (p.y_q * prey - 1.0),
    ]
}

/// One classical fourth-order Runge-Kutta step.
pub fn rk4_step<const D: usize>(f: impl Fn([f64; D]) -> [f64; D], s: [f64; D], h: f64) -> [f64; D] {
    let add = |a: [f64; D], b: [f64; D], w: f64| -> [f64; D] { std::array::from_fn(|i| a[i] + w * b[i]) };
    let k1 = f(s);
    let k2 = f(add(s, k1, h / 2.0));
    let k3 = f(add(s, k2, h / 2.0));
    let k4 = f(add(s, k3, h));
    std::array::from_fn(|i| s[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
}

/// Advances the system by one sampling interval.
pub fn advance(spec: &DynamicalSpec, state: &[f64]) -> Result<Vec<f64>> {
    match (spec.system, spec.integrator) {
        (DynamicalSystem::Ikeda { mu }, Integrator::Map) => {
            let next = ikeda_step(mu, [state[0], state[1]]);
            if next.iter().any(|v| !(v.abs() <= DIVERGENCE_LIMIT)) {
                return Err(KanError::Generation(format!("Ikeda orbit diverged at {next:?}")));
            }
            Ok(next.to_vec())
        }
        (DynamicalSystem::Ecosystem(p), Integrator::Rk4 { h, dt }) => {
            if !(h > 0.0 && dt >= h) {
                return Err(invalid(format!("RK4 needs 0 < h <= dt (h = {h}, dt = {dt})")));
            }
            let steps = (dt / h).round() as usize;
            let mut s = [state[0], state[1], state[2]];
            for _ in 0..steps {
                s = rk4_step(|v| ecosystem_rhs(&p, v), s, h);
                if let Some(v) = s.iter().find(|v| !(**v >= NEGATIVE_POPULATION_TOL)) {
                    return Err(KanError::Generation(format!(
                        "population {v} went negative; reduce the step size h = {h}"
                    )));
                }
            }
            Ok(s.to_vec())
        }
        (system, integrator) => Err(invalid(format!(
            "integrator {integrator:?} does not apply to {system:?}"
        ))),
    }
}

fn gen_dynamical(spec: &DynamicalSpec, name: &str) -> Result<Problem> {
    let d = spec.state_dim();
    if spec.initial_state.len() != d {
        return Err(invalid(format!("initial state needs {d} components")));
    }
    if spec.initial_state.iter().any(|v| !v.is_finite()) {
        return Err(invalid("initial state must be finite"));
    }
    if spec.n_train == 0 || spec.n_test == 0 {
        return Err(invalid("dynamical problems need nonempty train and test sets"));
    }
    let total = spec.n_train + spec.n_test + 1;
    let mut state = spec.initial_state.clone();
    for _ in 0..spec.transient_discard {
        state = advance(spec, &state)?;
    }
    let mut orbit = Vec::with_capacity(total * d);
    orbit.extend_from_slice(&state);
    for _ in 1..total {
        state = advance(spec, &state)?;
        orbit.extend_from_slice(&state);
    }
    let orbit = Array2::from_shape_vec((total, d), orbit).expect("orbit shape");
    let slice = |a: usize, b: usize| orbit.slice(ndarray::s![a..b, ..]).to_owned();
    Ok(Problem {
        name: name.to_string(),
        train_x: slice(0, spec.n_train),
        train_y: slice(1, spec.n_train + 1),
        test_x: slice(spec.n_train, spec.n_train + spec.n_test),
        test_y: slice(spec.n_train + 1, total),
        kind: ProblemKind::Dynamical,
        normalization: None,
        rejected_rows: 0,
    })
}

/// Iterates the Ikeda map; train pairs precede test pairs along one orbit.
pub fn gen_ikeda(spec: &DynamicalSpec) -> Result<Problem> {
    if !matches!(spec.system, DynamicalSystem::Ikeda { .. }) {
        return Err(invalid("gen_ikeda needs an Ikeda spec"));
    }
    gen_dynamical(spec, "ikeda")
}

/// Integrates the food chain with RK4 and pairs consecutive samples.
pub fn gen_ecosystem(spec: &DynamicalSpec) -> Result<Problem> {
    if !matches!(spec.system, DynamicalSystem::Ecosystem(_)) {
        return Err(invalid("gen_ecosystem needs an ecosystem spec"));
    }
    if spec.initial_state.iter().any(|v| *v < 0.0) {
        return Err(invalid("populations must start nonnegative"));
    }
    gen_dynamical(spec, "ecosystem")
}

/// Lowercase alphanumerics only, so "Fly Ash (kg/m3)" matches "flyash".
fn normalize_header(h: &str) -> String {
    h.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn read_numeric_csv(path: &Path) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.iter().map(normalize_header).collect();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                cell.trim().parse::<f64>().map_err(|_| {
                    invalid(format!("non-numeric cell '{cell}' at data row {}, column {}", i + 1, c + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(Table { headers, rows })
}

/// Finds the first column whose normalized header starts with one of `aliases`.
fn find_column(headers: &[String], aliases: &[&str], what: &str) -> Result<usize> {
    for alias in aliases {
        if let Some(i) = headers.iter().position(|h| h.starts_with(alias)) {
            return Ok(i);
        }
    }
    Err(invalid(format!("missing column for {what} (looked for {aliases:?})")))
}

fn split_and_standardize(
    name: &str,
    x: Array2<f64>,
    y: Array2<f64>,
    train_idx: &[usize],
    test_idx: &[usize],
    rejected_rows: usize,
) -> Problem {
    let train_x = x.select(Axis(0), train_idx);
    let norm = Normalization::fit(train_x.view());
    Problem {
        name: name.to_string(),
        train_x: norm.apply(&train_x),
        train_y: y.select(Axis(0), train_idx),
        test_x: norm.apply(&x.select(Axis(0), test_idx)),
        test_y: y.select(Axis(0), test_idx),
        kind: ProblemKind::Static,
        normalization: Some(norm),
        rejected_rows,
    }
}

pub const CONCRETE_FEATURES: [&str; 13] = [
    "cement",
    "slag",
    "fly_ash",
    "water",
    "superplasticizer",
    "coarse_aggregate",
    "fine_aggregate",
    "age",
    "water_cement_ratio",
    "water_binder_ratio",
    "total_binder",
    "total_aggregate",
    "log_age",
];

/// The 13 concrete features before standardization, or `None` if the row must be rejected.
pub fn concrete_features(raw: &[f64; 8]) -> Option<[f64; 13]> {
    let [cement, slag, fly_ash, water, sp, coarse, fine, age] = *raw;
    let binder = cement + slag + fly_ash;
    if cement <= 0.0 || binder <= 0.0 || age < 0.0 {
        return None;
    }
    Some([
        cement,
        slag,
        fly_ash,
        water,
        sp,
        coarse,
        fine,
        age,
        water / cement,
        water / binder,
        binder,
        coarse + fine,
        (age + 1.0).ln(),
    ])
}

/// UCI concrete compressive strength: 8 raw + 5 derived features,
/// standardized inputs, MPa targets, seeded 80/20 split.
pub fn load_concrete(csv_path: impl AsRef<Path>, seed: u64) -> Result<Problem> {
    let table = read_numeric_csv(csv_path.as_ref())?;
    let h = &table.headers;
    let cols = [
        find_column(h, &["cement"], "cement")?,
        find_column(h, &["blastfurnaceslag", "slag"], "slag")?,
        find_column(h, &["flyash"], "fly ash")?,
        find_column(h, &["water"], "water")?,
        find_column(h, &["superplasticizer", "superplasticiser"], "superplasticizer")?,
        find_column(h, &["coarseaggregate", "coarseagg"], "coarse aggregate")?,
        find_column(h, &["fineaggregate", "fineagg"], "fine aggregate")?,
        find_column(h, &["age"], "age")?,
    ];
    let target = find_column(
        h,
        &["compressivestrength", "concretecompressivestrength", "strength", "csmpa"],
        "compressive strength",
    )?;
    let mut features = Vec::new();
    let mut targets = Vec::new();
    let mut rejected = 0;
    for row in &table.rows {
        let raw: [f64; 8] = std::array::from_fn(|i| row[cols[i]]);
        match concrete_features(&raw) {
            Some(f) => {
                features.extend_from_slice(&f);
                targets.push(row[target]);
            }
            None => rejected += 1,
        }
    }
    if rejected > 0 {
        log::warn!("concrete: rejected {rejected} rows with non-positive cement or binder");
    }
    let n = targets.len();
    if n < 2 {
        return Err(invalid("concrete data has fewer than two usable rows"));
    }
    let x = Array2::from_shape_vec((n, 13), features).expect("feature shape");
    let y = Array2::from_shape_vec((n, 1), targets).expect("target shape");
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, DATA_STREAM));
    let n_train = (n * 4) / 5;
    Ok(split_and_standardize(
        "concrete",
        x,
        y,
        &order[..n_train],
        &order[n_train..],
        rejected,
    ))
}

pub const SUPERCONDUCTOR_FEATURES: [&str; 5] = [
    "number_of_elements",
    "wtd_mean_Valence",
    "wtd_mean_fie",
    "mean_ElectronAffinity",
    "entropy_Valence",
];
pub const SUPERCONDUCTOR_TARGET: &str = "critical_temp";

/// UCI superconductivity: five features, standardized; Kelvin targets;
/// disjoint seeded train/test samples.
pub fn load_superconductor(csv_path: impl AsRef<Path>, n_train: usize, n_test: usize, seed: u64) -> Result<Problem> {
    let table = read_numeric_csv(csv_path.as_ref())?;
    let index: HashMap<&str, usize> = table
        .headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.as_str(), i))
        .collect();
    let lookup = |name: &str| {
        index
            .get(normalize_header(name).as_str())
            .copied()
            .ok_or_else(|| invalid(format!("missing column '{name}'")))
    };
    let cols = SUPERCONDUCTOR_FEATURES
        .iter()
        .map(|n| lookup(n))
        .collect::<Result<Vec<_>>>()?;
    let target = lookup(SUPERCONDUCTOR_TARGET)?;
    let n = table.rows.len();
    if n < n_train + n_test {
        return Err(invalid(format!(
            "superconductor data has {n} rows, {} requested",
            n_train + n_test
        )));
    }
    let x = Array2::from_shape_fn((n, cols.len()), |(r, c)| table.rows[r][cols[c]]);
    let y = Array2::from_shape_fn((n, 1), |(r, _)| table.rows[r][target]);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, DATA_STREAM));
    Ok(split_and_standardize(
        "superconductor",
        x,
        y,
        &order[..n_train],
        &order[n_train..n_train + n_test],
        0,
    ))
}
