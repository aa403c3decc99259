use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sparse_kan::checkpoint;
use sparse_kan::data::{Problem, ProblemKind};
use sparse_kan::eval::{multistep_rmse, r_squared, rmse, ExperimentReport, ExperimentRow, Predictor, RowStatus};
use sparse_kan::network::GatedKan;
use sparse_kan::trainer::{evaluate_condition, Condition, History};
use sparse_kan::Real;

mod config;
mod experiment;
mod problem;

use config::{RunConfig, ScalarKind};

/// A command failure, split by exit code: 2 for usage errors, 1 for run failures.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Run(anyhow::Error),
}

impl Failure {
    pub fn usage(msg: impl fmt::Display) -> Self {
        Self::Usage(anyhow::anyhow!("{msg}"))
    }

    pub fn run(err: anyhow::Error) -> Self {
        Self::Run(err)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Self::Run(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::Run(e.into())
    }
}

impl From<sparse_kan::KanError> for Failure {
    fn from(e: sparse_kan::KanError) -> Self {
        Self::Run(e.into())
    }
}

#[derive(Parser)]
#[command(name = "sparse-kan", version, about = "Gated Kolmogorov-Arnold networks with forward connections")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or load a problem and write train/test CSV files.
    Gen {
        #[arg(long)]
        problem: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
        /// Source CSV for concrete/superconductor.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one cell and write checkpoint, history and final metrics.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to the first configured condition.
        #[arg(long)]
        condition: Option<String>,
        /// Defaults to the first configured beta.
        #[arg(long)]
        beta: Option<f64>,
        /// Defaults to the first configured seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint on the configured problem's test split.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Closed-loop rollout horizon (dynamical problems only).
        #[arg(long)]
        multistep: Option<usize>,
        /// Write (x, phi(x)) samples of every active edge to this CSV.
        #[arg(long)]
        dump_activations: Option<PathBuf>,
        /// Metrics file; defaults to eval.json next to the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every (condition, beta, seed) cell and write the combined report.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Cells run in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Rerun cells that already have results.
        #[arg(long)]
        force: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a JSONL report as an aligned table.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen {
            problem,
            seed,
            n_train,
            n_test,
            csv,
            out,
        } => cmd_gen(problem, seed, n_train, n_test, csv, out),
        Command::Train {
            config,
            condition,
            beta,
            seed,
            out,
        } => cmd_train(&config, condition, beta, seed, out),
        Command::Eval {
            config,
            checkpoint,
            multistep,
            dump_activations,
            out,
        } => cmd_eval(&config, &checkpoint, multistep, dump_activations, out),
        Command::Experiment {
            config,
            jobs,
            force,
            out,
        } => experiment::cmd_experiment(&config, jobs, force, out),
        Command::Report { input } => cmd_report(&input),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            eprintln!("run `sparse-kan --help` for usage");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn cmd_gen(
    name: String,
    seed: u64,
    n_train: Option<usize>,
    n_test: Option<usize>,
    csv: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<(), Failure> {
    problem::check_name(&name)?;
    let params = config::ProblemSection {
        name,
        seed,
        n_train,
        n_test,
        csv,
        multistep_horizon: None,
        mu: None,
    };
    let prob = problem::build(&params)?;
    let dir = config::resolve_out(out);
    problem::write_problem(&dir, &prob, &params)?;
    println!(
        "wrote {} train and {} test rows to {}",
        prob.train_x.nrows(),
        prob.test_x.nrows(),
        dir.display()
    );
    Ok(())
}

pub fn write_history(path: &Path, history: &History) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in &history.records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Trains one cell and writes its checkpoint and history into `dir`.
pub fn run_cell(
    cfg: &RunConfig,
    prob: &Problem,
    condition: Condition,
    beta: f64,
    seed: u64,
    dir: &Path,
) -> anyhow::Result<ExperimentRow> {
    match cfg.arch.scalar {
        ScalarKind::F64 => run_cell_typed::<f64>(cfg, prob, condition, beta, seed, dir),
        ScalarKind::F32 => run_cell_typed::<f32>(cfg, prob, condition, beta, seed, dir),
    }
}

fn run_cell_typed<T: Real>(
    cfg: &RunConfig,
    prob: &Problem,
    condition: Condition,
    beta: f64,
    seed: u64,
    dir: &Path,
) -> anyhow::Result<ExperimentRow> {
    let spec = condition.spec(beta, cfg.cond.gate_init);
    let horizon = match prob.kind {
        ProblemKind::Dynamical => cfg.problem.multistep_horizon,
        ProblemKind::Static => None,
    };
    let train = cfg.train_config(seed);
    let ev = evaluate_condition::<T>(prob, &cfg.arch.widths, &spec, &train, horizon)?;
    std::fs::create_dir_all(dir)?;
    checkpoint::save(&ev.net, dir.join("checkpoint.json"))?;
    write_history(&dir.join("history.jsonl"), &ev.history)?;
    let mut row = ev.row;
    row.config_hash = Some(cfg.hash());
    Ok(row)
}

fn cmd_train(
    config: &Path,
    condition: Option<String>,
    beta: Option<f64>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<(), Failure> {
    let cfg = RunConfig::load(config)?;
    let condition = match condition {
        Some(c) => c.parse::<Condition>().map_err(|e| Failure::usage(e.to_string()))?,
        None => cfg.conditions()?[0],
    };
    let beta = beta.or(cfg.cond.betas.first().copied()).unwrap_or(0.0);
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(Failure::usage("beta must be finite and nonnegative"));
    }
    let seed = seed.unwrap_or(cfg.seeds[0]);
    let prob = problem::build(&cfg.problem)?;
    let dir = cfg.out_dir(out.as_deref());
    let row = run_cell(&cfg, &prob, condition, beta, seed, &dir)?;
    std::fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&row).map_err(anyhow::Error::from)? + "\n")?;
    println!("{}", ExperimentReport::new(vec![row]).to_table());
    Ok(())
}

#[derive(serde::Serialize)]
struct EvalRecord {
    problem: String,
    r2: Option<f64>,
    rmse_1step: f64,
    rmse_multistep: Option<f64>,
    multistep_steps: Option<usize>,
    multistep_diverged: bool,
    trunk_active: usize,
    fc_active: usize,
    sparsity_pct: f64,
}

fn cmd_eval(
    config: &Path,
    ckpt: &Path,
    multistep: Option<usize>,
    dump: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<(), Failure> {
    let cfg = RunConfig::load(config)?;
    let prob = problem::build(&cfg.problem)?;
    if multistep.is_some() && prob.kind != ProblemKind::Dynamical {
        return Err(Failure::usage(format!(
            "--multistep needs a dynamical problem; '{}' is static",
            prob.name
        )));
    }
    let record = match cfg.arch.scalar {
        ScalarKind::F64 => eval_typed::<f64>(ckpt, &prob, multistep, dump.as_deref())?,
        ScalarKind::F32 => eval_typed::<f32>(ckpt, &prob, multistep, dump.as_deref())?,
    };
    let text = serde_json::to_string_pretty(&record).map_err(anyhow::Error::from)?;
    let path = out.unwrap_or_else(|| ckpt.with_file_name("eval.json"));
    std::fs::write(&path, text.clone() + "\n")?;
    println!("{text}");
    Ok(())
}

fn eval_typed<T: Real>(
    ckpt: &Path,
    prob: &Problem,
    multistep: Option<usize>,
    dump: Option<&Path>,
) -> Result<EvalRecord, Failure> {
    let net: GatedKan<T> = checkpoint::load(ckpt).map_err(|e| Failure::run(anyhow::anyhow!("{}: {e}", ckpt.display())))?;
    let shape = net.shape();
    if shape.input_dim() != prob.input_dim() || shape.output_dim() != prob.output_dim() {
        return Err(Failure::run(anyhow::anyhow!(
            "dimension mismatch: checkpoint expects {} inputs and {} outputs, data has {} and {}",
            shape.input_dim(),
            shape.output_dim(),
            prob.input_dim(),
            prob.output_dim()
        )));
    }
    let pred = net.predict_batch(prob.test_x.view())?;
    let ms = match multistep {
        Some(h) => {
            let traj = prob.test_trajectory().expect("dynamical problem");
            Some(multistep_rmse(&net, traj.view(), h)?)
        }
        None => None,
    };
    if let Some(path) = dump {
        dump_activations(&net, path)?;
    }
    let counts = net.active_counts();
    Ok(EvalRecord {
        problem: prob.name.clone(),
        r2: r_squared(pred.view(), prob.test_y.view()).ok(),
        rmse_1step: rmse(pred.view(), prob.test_y.view())?,
        rmse_multistep: ms.and_then(|m| m.rmse),
        multistep_steps: ms.map(|m| m.steps_used),
        multistep_diverged: ms.is_some_and(|m| m.diverged),
        trunk_active: counts.trunk,
        fc_active: counts.fc,
        sparsity_pct: counts.sparsity_pct,
    })
}

const DUMP_SAMPLES: usize = 101;

fn dump_activations<T: Real>(net: &GatedKan<T>, path: &Path) -> anyhow::Result<()> {
    let open = net.egates.inference_gates_threshold();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["edge", "layer", "source", "target", "kind", "x", "phi"])?;
    for e in (0..net.num_edges()).filter(|&e| open[e]) {
        let r = net.edge_ref(e);
        let kind = match r.kind {
            sparse_kan::EdgeKind::Trunk => "trunk",
            sparse_kan::EdgeKind::Fc => "fc",
        };
        for (x, y) in net.activation_samples(e, DUMP_SAMPLES) {
            w.write_record([
                e.to_string(),
                r.layer.to_string(),
                r.source.to_string(),
                r.target.to_string(),
                kind.to_string(),
                x.to_string(),
                y.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_report(input: &Path) -> Result<(), Failure> {
    let file = File::open(input).map_err(|e| Failure::usage(format!("cannot open {}: {e}", input.display())))?;
    let report = ExperimentReport::read_jsonl(BufReader::new(file))?;
    print!("{}", report.to_table());
    if report.rows.iter().any(|r| r.status == RowStatus::Failed) {
        return Err(Failure::run(anyhow::anyhow!("report contains failed cells")));
    }
    Ok(())
}
