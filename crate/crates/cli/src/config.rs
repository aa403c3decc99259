//! Run configuration: a flat TOML document with `problem.*`, `arch.*`,
//! `cond.*`, `train.*`, `out.dir` and a top-level `seeds` list.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sparse_kan::trainer::{Condition, EarlyStop, GridUpdateSchedule, TrainConfig};

use crate::Failure;

pub const OUT_ENV: &str = "SPARSE_KAN_OUT";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarKind {
    #[default]
    F64,
    F32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    /// `anecdote`, `nguyen-f1` .. `nguyen-f10`, `ikeda`, `ecosystem`, `concrete` or `superconductor`.
    pub name: String,
    /// Seed for data generation and splits; training seeds come from `seeds`.
    #[serde(default)]
    pub seed: u64,
    pub n_train: Option<usize>,
    pub n_test: Option<usize>,
    /// CSV source for the tabular problems.
    pub csv: Option<PathBuf>,
    /// Closed-loop rollout length for dynamical problems.
    pub multistep_horizon: Option<usize>,
    /// Ikeda bifurcation parameter.
    pub mu: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSection {
    pub widths: Vec<usize>,
    #[serde(default)]
    pub scalar: ScalarKind,
}

fn default_conditions() -> Vec<String> {
    Condition::ALL.iter().map(|c| c.label().to_string()).collect()
}

fn default_betas() -> Vec<f64> {
    vec![0.1]
}

fn default_gate_init() -> f64 {
    -1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CondSection {
    #[serde(default = "default_conditions")]
    pub conditions: Vec<String>,
    /// One cell per beta for each gated condition; ungated conditions use beta 0.
    #[serde(default = "default_betas")]
    pub betas: Vec<f64>,
    #[serde(default = "default_gate_init")]
    pub gate_init: f64,
}

impl Default for CondSection {
    fn default() -> Self {
        Self {
            conditions: default_conditions(),
            betas: default_betas(),
            gate_init: default_gate_init(),
        }
    }
}

fn default_batch() -> usize {
    128
}
fn default_lr() -> f64 {
    1e-3
}
fn default_warmup() -> usize {
    200
}
fn default_fc_warmup() -> usize {
    100
}
fn default_grid_updates() -> usize {
    10
}
fn default_grid_window() -> usize {
    50
}
fn default_true() -> bool {
    true
}
fn default_threshold() -> f64 {
    0.99
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_warmup")]
    pub warmup_epochs: usize,
    #[serde(default = "default_fc_warmup")]
    pub fc_warmup_epochs: usize,
    #[serde(default = "default_grid_updates")]
    pub grid_updates: usize,
    #[serde(default = "default_grid_window")]
    pub grid_update_window: usize,
    #[serde(default = "default_true")]
    pub early_stop: bool,
    #[serde(default = "default_threshold")]
    pub decisiveness_threshold: f64,
    pub patience: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutSection {
    pub dir: Option<PathBuf>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub problem: ProblemSection,
    pub arch: ArchSection,
    #[serde(default)]
    pub cond: CondSection,
    pub train: TrainSection,
    #[serde(default)]
    pub out: OutSection,
}

impl RunConfig {
    /// Parses and validates a config file. Relative paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Failure::usage(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(csv) = &cfg.problem.csv {
            if csv.is_relative() {
                cfg.problem.csv = Some(base.join(csv));
            }
        }
        if let Some(dir) = &cfg.out.dir {
            if dir.is_relative() {
                cfg.out.dir = Some(base.join(dir));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Failure> {
        if self.seeds.is_empty() {
            return Err(Failure::usage("seeds must not be empty"));
        }
        if self.arch.widths.len() < 2 || self.arch.widths.contains(&0) {
            return Err(Failure::usage("arch.widths needs at least two positive widths"));
        }
        let conditions = self.conditions()?;
        if conditions.is_empty() {
            return Err(Failure::usage("cond.conditions must not be empty"));
        }
        if conditions.iter().any(|c| c.use_gates()) && self.cond.betas.is_empty() {
            return Err(Failure::usage("cond.betas must not be empty for gated conditions"));
        }
        if self.cond.betas.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(Failure::usage("cond.betas must be finite and nonnegative"));
        }
        if let Some(csv) = &self.problem.csv {
            if !csv.exists() {
                return Err(Failure::usage(format!("data file {} does not exist", csv.display())));
            }
        }
        if matches!(self.problem.name.as_str(), "concrete" | "superconductor") && self.problem.csv.is_none() {
            return Err(Failure::usage(format!("problem '{}' needs problem.csv", self.problem.name)));
        }
        self.train_config(self.seeds[0])
            .validate()
            .map_err(|e| Failure::usage(format!("invalid train section: {e}")))?;
        crate::problem::check_name(&self.problem.name)?;
        Ok(())
    }

    pub fn conditions(&self) -> Result<Vec<Condition>, Failure> {
        self.cond
            .conditions
            .iter()
            .map(|c| c.parse::<Condition>().map_err(|e| Failure::usage(e.to_string())))
            .collect()
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.train;
        let mut cfg = TrainConfig::new(t.epochs, t.batch_size, seed);
        cfg.lr = t.lr;
        cfg.warmup_epochs = t.warmup_epochs;
        cfg.fc_warmup_epochs = t.fc_warmup_epochs;
        cfg.grid_updates = GridUpdateSchedule {
            count: t.grid_updates,
            within_epochs: t.grid_update_window,
        };
        cfg.early_stop = EarlyStop {
            enabled: t.early_stop,
            decisiveness_threshold: t.decisiveness_threshold,
            patience: t.patience,
        };
        cfg
    }

    /// Output directory: explicit flag, then `out.dir`, then `$SPARSE_KAN_OUT`, then `runs`.
    pub fn out_dir(&self, flag: Option<&Path>) -> PathBuf {
        resolve_out(flag.map(Path::to_path_buf).or_else(|| self.out.dir.clone()))
    }

    /// Hash of everything that determines a cell's result except its seed.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.seeds.clear();
        canonical.out.dir = None;
        let json = serde_json::to_string(&canonical).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

pub fn resolve_out(explicit: Option<PathBuf>) -> PathBuf {
    explicit
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}
