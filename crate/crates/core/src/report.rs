//! Experiment report rows and their text/JSONL renderings.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::network::sparsity_pct;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub problem: String,
    pub condition: String,
    pub beta: f64,
    pub r2: Option<f64>,
    pub rmse_1step: Option<f64>,
    /// Dynamical problems only.
    pub rmse_multistep: Option<f64>,
    #[serde(default)]
    pub multistep_diverged: bool,
    pub trunk_active: usize,
    /// `None` when the network has no forward connections.
    pub fc_active: Option<usize>,
    /// Total gated edges, trunk plus FC.
    pub total_edges: usize,
    pub sparsity_pct: f64,
    /// Epochs actually run (early stopping may end a run sooner).
    pub epochs: usize,
    pub seed: u64,
    pub status: RowStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl ExperimentRow {
    /// A placeholder row for a cell that did not finish.
    pub fn failed(problem: &str, condition: &str, beta: f64, seed: u64, error: String) -> Self {
        Self {
            problem: problem.to_string(),
            condition: condition.to_string(),
            beta,
            r2: None,
            rmse_1step: None,
            rmse_multistep: None,
            multistep_diverged: false,
            trunk_active: 0,
            fc_active: None,
            total_edges: 0,
            sparsity_pct: 0.0,
            epochs: 0,
            seed,
            status: RowStatus::Failed,
            error: Some(error),
            config_hash: None,
        }
    }

    /// Sparsity recomputed from the counts.
    pub fn recomputed_sparsity(&self) -> f64 {
        sparsity_pct(self.trunk_active + self.fc_active.unwrap_or(0), self.total_edges)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<ExperimentRow>,
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    match v {
        Some(v) => format!("{v:.digits$}"),
        None => "--".to_string(),
    }
}

impl ExperimentReport {
    pub fn new(rows: Vec<ExperimentRow>) -> Self {
        Self { rows }
    }

    pub fn any_failed(&self) -> bool {
        self.rows.iter().any(|r| r.status == RowStatus::Failed)
    }

    /// Aligned text table, one block per problem.
    pub fn to_table(&self) -> String {
        let header = [
            "Problem", "Condition", "beta", "R2", "RMSE 1-step", "MS", "Trunk", "FC", "Sparsity (%)", "Epochs", "Seed",
        ];
        let mut cells: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for r in &self.rows {
            let ms = match (r.rmse_multistep, r.multistep_diverged) {
                (Some(v), true) => format!("{v:.4}*"),
                (v, _) => fmt_opt(v, 4),
            };
            if r.status == RowStatus::Failed {
                let mut row = vec![r.problem.clone(), r.condition.clone(), format!("{}", r.beta)];
                row.push("FAILED".into());
                row.extend(std::iter::repeat_n(String::new(), 5));
                row.push("--".into());
                row.push(r.seed.to_string());
                cells.push(row);
                continue;
            }
            cells.push(vec![
                r.problem.clone(),
                r.condition.clone(),
                format!("{}", r.beta),
                fmt_opt(r.r2, 4),
                fmt_opt(r.rmse_1step, 4),
                ms,
                r.trunk_active.to_string(),
                r.fc_active.map_or("--".into(), |v| v.to_string()),
                format!("{:.1}", r.sparsity_pct),
                r.epochs.to_string(),
                r.seed.to_string(),
            ]);
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|c| cells.iter().map(|row| row[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, row) in cells.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (cell, w))| if c < 2 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
            if i == 0 {
                let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
                let _ = writeln!(out, "{}", "-".repeat(total));
            }
        }
        if self.rows.iter().any(|r| r.multistep_diverged) {
            out.push_str("* rollout diverged; MS over the finite prefix\n");
        }
        out
    }

    /// One JSON object per row.
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for r in &self.rows {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<Self> {
        let mut rows = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            rows.push(serde_json::from_str(&line)?);
        }
        Ok(Self { rows })
    }
}
