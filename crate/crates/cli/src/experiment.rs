//! The condition x beta x seed grid runner.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use sparse_kan::eval::{ExperimentReport, ExperimentRow, RowStatus};
use sparse_kan::trainer::Condition;

use crate::config::RunConfig;
use crate::{problem, run_cell, Failure};

pub const REPORT_JSONL: &str = "report.jsonl";
pub const REPORT_TABLE: &str = "report.txt";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub condition: Condition,
    pub beta: f64,
    pub seed: u64,
}

impl Cell {
    pub fn id(&self) -> String {
        format!("{}-b{}-s{}", self.condition.label(), self.beta, self.seed)
    }

    fn matches(&self, row: &ExperimentRow) -> bool {
        row.condition == self.condition.label() && row.beta == self.beta && row.seed == self.seed
    }
}

/// Gated conditions get one cell per beta; ungated ones a single beta-0 cell.
pub fn cells(cfg: &RunConfig) -> Result<Vec<Cell>, Failure> {
    let mut out = Vec::new();
    for condition in cfg.conditions()? {
        let betas = if condition.use_gates() { cfg.cond.betas.clone() } else { vec![0.0] };
        for beta in betas {
            for &seed in &cfg.seeds {
                out.push(Cell { condition, beta, seed });
            }
        }
    }
    Ok(out)
}

fn read_existing(path: &Path) -> Vec<ExperimentRow> {
    match File::open(path) {
        Ok(f) => match ExperimentReport::read_jsonl(BufReader::new(f)) {
            Ok(r) => r.rows,
            Err(e) => {
                log::warn!("ignoring unreadable {}: {e}", path.display());
                Vec::new()
            }
        },
        Err(_) => Vec::new(),
    }
}

pub fn cmd_experiment(config: &Path, jobs: usize, force: bool, out: Option<PathBuf>) -> Result<(), Failure> {
    if jobs == 0 {
        return Err(Failure::usage("--jobs must be at least 1"));
    }
    let cfg = RunConfig::load(config)?;
    let all = cells(&cfg)?;
    let hash = cfg.hash();
    let dir = cfg.out_dir(out.as_deref());
    std::fs::create_dir_all(&dir)?;
    let jsonl = dir.join(REPORT_JSONL);

    let existing = if force { Vec::new() } else { read_existing(&jsonl) };
    let mut done: HashMap<usize, ExperimentRow> = HashMap::new();
    for (i, cell) in all.iter().enumerate() {
        if let Some(row) = existing.iter().find(|r| {
            cell.matches(r)
                && r.status == RowStatus::Ok
                && r.config_hash.as_deref() == Some(hash.as_str())
        }) {
            done.insert(i, row.clone());
        }
    }
    let todo: Vec<usize> = (0..all.len()).filter(|i| !done.contains_key(i)).collect();
    log::info!("{} cells, {} already complete, {} to run", all.len(), done.len(), todo.len());

    // rows from a previous run are kept; completed cells are appended one by one
    let sink = {
        let mut f = OpenOptions::new().create(true).write(true).truncate(true).open(&jsonl)?;
        for row in done.values() {
            serde_json::to_writer(&mut f, row).map_err(anyhow::Error::from)?;
            f.write_all(b"\n")?;
        }
        Mutex::new(f)
    };

    let prob = if todo.is_empty() { None } else { Some(problem::build(&cfg.problem)?) };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Failure::run(e.into()))?;
    let fresh: Vec<(usize, ExperimentRow)> = pool.install(|| {
        todo.par_iter()
            .map(|&i| {
                let cell = all[i];
                let prob = prob.as_ref().expect("problem built when cells remain");
                let cell_dir = dir.join("cells").join(cell.id());
                log::info!("running {}", cell.id());
                let row = match run_cell(&cfg, prob, cell.condition, cell.beta, cell.seed, &cell_dir) {
                    Ok(row) => row,
                    Err(e) => {
                        log::error!("cell {} failed: {e:#}", cell.id());
                        let mut row = ExperimentRow::failed(&prob.name, cell.condition.label(), cell.beta, cell.seed, format!("{e:#}"));
                        row.config_hash = Some(hash.clone());
                        row
                    }
                };
                let mut f = sink.lock().expect("report sink");
                if let Err(e) = serde_json::to_writer(&mut *f, &row).map_err(std::io::Error::from).and_then(|_| {
                    f.write_all(b"\n")?;
                    f.flush()
                }) {
                    log::error!("could not record cell {}: {e}", cell.id());
                }
                (i, row)
            })
            .collect()
    });
    done.extend(fresh);

    let mut ordered: Vec<(usize, ExperimentRow)> = done.into_iter().collect();
    ordered.sort_by_key(|(i, _)| *i);
    let report = ExperimentReport::new(ordered.into_iter().map(|(_, r)| r).collect());
    let mut f = File::create(&jsonl)?;
    report.write_jsonl(&mut f)?;
    let table = report.to_table();
    std::fs::write(dir.join(REPORT_TABLE), &table)?;
    print!("{table}");
    if report.any_failed() {
        return Err(Failure::run(anyhow::anyhow!("one or more cells failed; see {}", jsonl.display())));
    }
    Ok(())
}
