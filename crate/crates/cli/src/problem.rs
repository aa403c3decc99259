//! Builds problems from config fields and writes them as CSV.

use std::path::Path;

use ndarray::Array2;
use serde::Serialize;
use sparse_kan::data::{
    gen_ecosystem, gen_ikeda, gen_symbolic, load_concrete, load_superconductor, DynamicalSpec, DynamicalSystem,
    Problem, SymbolicId,
};

use crate::config::ProblemSection;
use crate::Failure;

pub const TABULAR: [&str; 2] = ["concrete", "superconductor"];
pub const DYNAMICAL: [&str; 2] = ["ikeda", "ecosystem"];

pub fn check_name(name: &str) -> Result<(), Failure> {
    if TABULAR.contains(&name) || DYNAMICAL.contains(&name) || name.parse::<SymbolicId>().is_ok() {
        Ok(())
    } else {
        Err(Failure::usage(format!(
            "unknown problem '{name}'; expected anecdote, nguyen-f1..nguyen-f10, ikeda, ecosystem, concrete or superconductor"
        )))
    }
}

pub fn build(p: &ProblemSection) -> Result<Problem, Failure> {
    check_name(&p.name)?;
    let run = |e: sparse_kan::KanError| Failure::run(e.into());
    match p.name.as_str() {
        "ikeda" | "ecosystem" => {
            let mut spec = if p.name == "ikeda" {
                DynamicalSpec::ikeda_default()
            } else {
                DynamicalSpec::ecosystem_default()
            };
            if let Some(n) = p.n_train {
                spec.n_train = n;
            }
            if let Some(n) = p.n_test {
                spec.n_test = n;
            }
            if let Some(mu) = p.mu {
                if p.name != "ikeda" {
                    return Err(Failure::usage("problem.mu applies to ikeda only"));
                }
                spec.system = DynamicalSystem::Ikeda { mu };
            }
            if p.name == "ikeda" {
                gen_ikeda(&spec).map_err(run)
            } else {
                gen_ecosystem(&spec).map_err(run)
            }
        }
        "concrete" => {
            let csv = p.csv.as_ref().ok_or_else(|| Failure::usage("concrete needs problem.csv"))?;
            load_concrete(csv, p.seed).map_err(run)
        }
        "superconductor" => {
            let csv = p.csv.as_ref().ok_or_else(|| Failure::usage("superconductor needs problem.csv"))?;
            load_superconductor(csv, p.n_train.unwrap_or(1000), p.n_test.unwrap_or(1000), p.seed).map_err(run)
        }
        name => {
            let id: SymbolicId = name.parse().map_err(|e: sparse_kan::KanError| Failure::usage(e.to_string()))?;
            gen_symbolic(id, p.n_train.unwrap_or(1024), p.n_test.unwrap_or(256), p.seed).map_err(run)
        }
    }
}

fn write_matrix(path: &Path, x: &Array2<f64>, y: &Array2<f64>) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let header: Vec<String> = (0..x.ncols())
        .map(|i| format!("x{i}"))
        .chain((0..y.ncols()).map(|i| format!("y{i}")))
        .collect();
    w.write_record(&header)?;
    for (xr, yr) in x.rows().into_iter().zip(y.rows()) {
        let row: Vec<String> = xr.iter().chain(yr.iter()).map(|v| format!("{v:e}")).collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Provenance<'a> {
    generator: &'a str,
    params: &'a ProblemSection,
    seed: u64,
    n_train: usize,
    n_test: usize,
    rejected_rows: usize,
    tool_version: &'static str,
}

/// Writes `train.csv`, `test.csv` and `provenance.json` into `dir`.
pub fn write_problem(dir: &Path, problem: &Problem, params: &ProblemSection) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)?;
    write_matrix(&dir.join("train.csv"), &problem.train_x, &problem.train_y)?;
    write_matrix(&dir.join("test.csv"), &problem.test_x, &problem.test_y)?;
    let prov = Provenance {
        generator: &problem.name,
        params,
        seed: params.seed,
        n_train: problem.train_x.nrows(),
        n_test: problem.test_x.nrows(),
        rejected_rows: problem.rejected_rows,
        tool_version: env!("CARGO_PKG_VERSION"),
    };
    std::fs::write(dir.join("provenance.json"), serde_json::to_string_pretty(&prov)? + "\n")?;
    Ok(())
}
