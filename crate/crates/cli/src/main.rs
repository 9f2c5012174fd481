//! `vbpsim`: validate scenarios, run task sets and sweeps, score results.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use vbpsim::metrics::{self, SweepSpec};
use vbpsim::scenario::{load_scenarios_with_warnings, ScenarioError};
use vbpsim::workflow::{self, RunConfig, WorkflowError};
use vbpsim::{Algorithm, OverrideTarget};

#[derive(Parser, Debug)]
#[command(name = "vbpsim", version, about = "Volume-based drug procurement bidding simulator")]
struct Cli {
    #[command(flatten)]
    shared: Shared,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Shared {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (overrides the config).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Base seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Args, Debug, Default)]
struct RunOverrides {
    /// Scenario file (overrides the config).
    #[arg(long)]
    scenarios: Option<PathBuf>,
    /// Comma-separated algorithms: rule, ippo, mappo, llm.
    #[arg(long, value_delimiter = ',')]
    algorithms: Vec<Algorithm>,
    /// Comma-separated drug ids to run.
    #[arg(long, value_delimiter = ',')]
    drugs: Vec<String>,
    /// Training episodes per task.
    #[arg(long)]
    episodes: Option<usize>,
    /// Bidding rounds per episode.
    #[arg(long)]
    timesteps: Option<usize>,
    /// Name of the output subdirectory.
    #[arg(long)]
    batch_id: Option<String>,
    /// Write per-step trajectory.csv files.
    #[arg(long)]
    trajectory: bool,
    /// Replay a scripted mock instead of calling the chat endpoint.
    #[arg(long)]
    mock_script: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a scenario file against every invariant.
    Validate {
        /// Scenario JSON file.
        file: PathBuf,
    },
    /// Train and evaluate every task of the configured batch.
    Run {
        #[command(flatten)]
        overrides: RunOverrides,
    },
    /// Sensitivity sweep over one parameter.
    Sweep {
        /// rho, p_max, q0, qe or cost.
        #[arg(long)]
        target: OverrideTarget,
        /// Comma-separated multipliers, e.g. 0.8,1.0,1.2.
        #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
        multipliers: Vec<f64>,
        /// Number of seeds per multiplier.
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[command(flatten)]
        overrides: RunOverrides,
    },
    /// Score final strategies against a reference, or summarize profits.
    Metrics {
        /// Batch directory written by `run`.
        #[arg(long)]
        run_dir: PathBuf,
        /// CSV with drug_id, firm_id, actual_price, actual_winner.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
}

/// Error with its process exit code: 1 for domain failures, 2 for I/O and
/// usage failures.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn domain(error: impl Into<anyhow::Error>) -> Self {
        Self { code: 1, error: error.into() }
    }

    fn io(error: impl Into<anyhow::Error>) -> Self {
        Self { code: 2, error: error.into() }
    }
}

impl From<WorkflowError> for Failure {
    fn from(e: WorkflowError) -> Self {
        if e.is_io() {
            Failure::io(e)
        } else {
            Failure::domain(e)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.shared.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Validate { file } => validate(&file),
        Command::Run { overrides } => run(&cli.shared, &overrides),
        Command::Sweep {
            target,
            multipliers,
            seeds,
            overrides,
        } => sweep(&cli.shared, &overrides, target, &multipliers, seeds),
        Command::Metrics { run_dir, reference } => {
            metrics_cmd(&cli.shared, &run_dir, reference.as_deref())
        }
    }
}

fn validate(file: &Path) -> Result<(), Failure> {
    match load_scenarios_with_warnings(file) {
        Ok((scenarios, warnings)) => {
            for w in &warnings {
                println!("warning: {w}");
            }
            for s in &scenarios {
                println!("ok: {} ({} firms, x = {})", s.drug_id, s.num_firms(), s.x);
            }
            println!("{} scenarios valid, {} warnings", scenarios.len(), warnings.len());
            Ok(())
        }
        Err(e @ ScenarioError::Io { .. }) => Err(Failure::io(e)),
        Err(e) => Err(Failure::domain(e)),
    }
}

fn load_config(shared: &Shared, o: &RunOverrides) -> Result<RunConfig, Failure> {
    let mut cfg = match &shared.config {
        Some(path) => RunConfig::load(path).map_err(Failure::from)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &shared.out {
        cfg.out = v.clone();
    }
    if let Some(v) = shared.workers {
        cfg.workers = v;
    }
    if let Some(v) = shared.seed {
        cfg.seed = v;
    }
    if let Some(v) = &o.scenarios {
        cfg.scenarios = v.clone();
    } else if shared.config.is_none() {
        return Err(Failure::io(anyhow!("pass --config or --scenarios")));
    }
    if !o.algorithms.is_empty() {
        cfg.algorithms = o.algorithms.clone();
    }
    if !o.drugs.is_empty() {
        cfg.drugs = o.drugs.clone();
    }
    if let Some(v) = o.episodes {
        cfg.episodes = v;
    }
    if let Some(v) = o.timesteps {
        cfg.timesteps = v;
    }
    if let Some(v) = &o.batch_id {
        cfg.batch_id = v.clone();
    }
    if o.trajectory {
        cfg.trajectory = true;
    }
    if let Some(v) = &o.mock_script {
        cfg.llm.mock_script = Some(v.clone());
    }
    cfg.validate().map_err(Failure::io)?;
    Ok(cfg)
}

fn run(shared: &Shared, o: &RunOverrides) -> Result<(), Failure> {
    let cfg = load_config(shared, o)?;
    let start = Instant::now();
    let reports = workflow::run_batch(&cfg)?;
    println!("{:<48} {:>8} {:>10}  status", "task", "episodes", "wall_s");
    let mut failed = 0;
    for r in &reports {
        match &r.result {
            Ok(s) => println!("{:<48} {:>8} {:>10.2}  ok", r.task.label(), s.episodes, s.wall_seconds),
            Err(e) => {
                failed += 1;
                println!("{:<48} {:>8} {:>10}  FAILED: {e}", r.task.label(), "-", "-");
            }
        }
    }
    println!(
        "{} tasks, {} failed, {:.2}s total, outputs in {}",
        reports.len(),
        failed,
        start.elapsed().as_secs_f64(),
        cfg.out.join(&cfg.batch_id).display()
    );
    if failed > 0 {
        return Err(Failure::domain(anyhow!("{failed} of {} tasks failed", reports.len())));
    }
    Ok(())
}

fn sweep(
    shared: &Shared,
    o: &RunOverrides,
    target: OverrideTarget,
    multipliers: &[f64],
    seeds: usize,
) -> Result<(), Failure> {
    if multipliers.is_empty() || seeds == 0 {
        return Err(Failure::io(anyhow!("sweep needs multipliers and at least one seed")));
    }
    if let Some(m) = multipliers.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
        return Err(Failure::io(anyhow!("multiplier {m} must be positive")));
    }
    let cfg = load_config(shared, o)?;
    let scenarios = vbpsim::load_scenarios(&cfg.scenarios)
        .map_err(WorkflowError::from)
        .map_err(Failure::from)?;
    let selected = workflow::select_scenarios(&cfg, &scenarios)?;
    let agents = workflow::agent_config(&cfg)?;
    let options = workflow::run_options(&cfg);
    let seed_list = metrics::sweep_seeds(cfg.seed, seeds);
    let pool = rayon_pool(cfg.workers)?;
    let mut rows = Vec::new();
    for s in &selected {
        for &algorithm in &cfg.algorithms {
            let spec = SweepSpec {
                batch_id: cfg.batch_id.clone(),
                algorithm,
                target,
                multipliers: multipliers.to_vec(),
                seeds: seed_list.clone(),
                episodes: cfg.episodes,
                timesteps: cfg.timesteps,
            };
            let curve = pool.install(|| metrics::sweep(s, &spec, &agents, &options))?;
            for r in &curve {
                println!(
                    "{} {} x{}: price {:.4} [{:.4}, {:.4}], profit {:.2} [{:.2}, {:.2}]",
                    r.drug_id,
                    r.algorithm,
                    r.multiplier,
                    r.mean_price,
                    r.price_ci_lo,
                    r.price_ci_hi,
                    r.mean_profit,
                    r.profit_ci_lo,
                    r.profit_ci_hi
                );
            }
            rows.extend(curve);
        }
    }
    let path = metrics::write_sweep_csv(&cfg.out.join(&cfg.batch_id), target, &rows)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn rayon_pool(workers: usize) -> Result<rayon::ThreadPool, Failure> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(Failure::domain)
}

fn metrics_cmd(shared: &Shared, run_dir: &Path, reference: Option<&Path>) -> Result<(), Failure> {
    if !run_dir.is_dir() {
        return Err(Failure::io(anyhow!("{}: not a directory", run_dir.display())));
    }
    let runs = metrics::collect_runs(run_dir)?;
    if runs.is_empty() {
        return Err(Failure::domain(anyhow!(
            "no final strategies found under {}",
            run_dir.display()
        )));
    }
    let out_dir = shared.out.clone().unwrap_or_else(|| run_dir.to_path_buf());
    std::fs::create_dir_all(&out_dir)
        .with_context(|| out_dir.display().to_string())
        .map_err(Failure::io)?;
    let path = out_dir.join(metrics::METRICS);
    match reference {
        Some(r) => {
            if !r.exists() {
                return Err(Failure::io(anyhow!("{}: file not found", r.display())));
            }
            let reference = metrics::load_reference(r)?;
            let rows = metrics::reference_metrics(&runs, &reference)?;
            workflow::write_csv(&path, &rows)?;
            for row in rows.iter().filter(|r| r.drug_id == metrics::POOLED) {
                println!(
                    "{}: spearman {:.3} (p {:.3}), log R2 {:.3}, alignment {:.3}",
                    row.algorithm, row.spearman, row.p, row.r2, row.alignment
                );
            }
        }
        None => {
            let rows = metrics::profit_summary(&runs);
            workflow::write_csv(&path, &rows)?;
        }
    }
    println!("wrote {}", path.display());
    Ok(())
}
