//! Command-line front end: run experiments, search hyperparameters,
//! sweep wrapper knobs, summarize finished runs, and compute reference
//! baselines. Exit codes: 0 success, 1 usage or configuration error,
//! 2 unreadable or missing input data, 3 numerical divergence.

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use continual_core::error::{Error, Result};
use continual_core::experiment::{
    AblationKnob, ExperimentConfig, ablation_sweep, baselines, grid_search, load_run_record,
    run_experiment, save_run_record,
};
use continual_core::methods::MethodKind;
use continual_core::persist::atomic_write;
use continual_core::report::{
    ablation_to_csv, baselines_to_csv, grid_to_csv, render_text, rows_to_csv, summarize,
};
use continual_core::stream::{build_stream, save_manifest};

#[derive(Parser)]
#[command(
    name = "continual",
    version,
    about = "Continual-learning benchmark runner with a slow-weight wrapper"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every training command. Each one overrides the
/// corresponding config field; unset flags leave the config alone.
#[derive(Args, Clone)]
struct CommonOpts {
    /// TOML experiment config; omitted means the built-in benchmark.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for records and tables.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training method: sgd, oewc, or derpp.
    #[arg(long)]
    method: Option<MethodKind>,
    /// Turn the slow-weight wrapper on or off (true/false).
    #[arg(long, value_parser = clap::builder::BoolishValueParser::new())]
    momentum: Option<bool>,
    /// Wrapper retention factor in [0, 1].
    #[arg(long)]
    tau: Option<f64>,
    /// Continual-phase learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Replay buffer capacity.
    #[arg(long)]
    buffer: Option<usize>,
    /// Run seeds, comma separated or repeated.
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured seed and write run records.
    Run(CommonOpts),
    /// Grid-search the learning rate (and tau when the wrapper is on).
    Grid(CommonOpts),
    /// Sweep one wrapper knob over every seed.
    Ablate {
        #[command(flatten)]
        opts: CommonOpts,
        /// Knob to vary: tau, update_freq, or restart_freq.
        #[arg(long)]
        knob: AblationKnob,
        /// Knob values, comma separated; restart_freq accepts "absent".
        /// Omitted means the knob's standard sweep.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
    },
    /// Summarize the run records in a directory into a table.
    Report {
        /// Directory holding .run.toml records.
        #[arg(long, default_value = "runs")]
        dir: PathBuf,
    },
    /// Evaluate the zero-shot and jointly trained reference bounds.
    Baselines(CommonOpts),
}

fn load_config(opts: &CommonOpts) -> Result<ExperimentConfig> {
    let mut cfg = match &opts.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &opts.out {
        cfg.out_dir = out.clone();
    }
    if let Some(method) = opts.method {
        cfg.method = method;
    }
    if let Some(enabled) = opts.momentum {
        cfg.momentum.enabled = enabled;
    }
    if let Some(tau) = opts.tau {
        cfg.momentum.tau = tau;
    }
    if let Some(lr) = opts.lr {
        cfg.train.learning_rate = lr;
    }
    if let Some(capacity) = opts.buffer {
        cfg.derpp.buffer_capacity = capacity;
    }
    if !opts.seed.is_empty() {
        cfg.seeds = opts.seed.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_run(opts: &CommonOpts) -> Result<()> {
    let cfg = load_config(opts)?;
    let (_, manifest) = build_stream::<f64>(&cfg.stream)?;
    save_manifest(&cfg.out_dir.join("stream.toml"), &manifest)?;
    for &seed in &cfg.seeds {
        let out = run_experiment(&cfg, seed)?;
        let path = save_run_record(&cfg.out_dir, &out.record)?;
        println!(
            "seed {seed}: class_il {:.2}  task_il {:.2}  forgetting {:.2}  steps {}  ({})",
            out.record.final_class_il,
            out.record.final_task_il,
            out.record.forgetting,
            out.step_count,
            path.display()
        );
    }
    Ok(())
}

fn cmd_grid(opts: &CommonOpts) -> Result<()> {
    let cfg = load_config(opts)?;
    let outcome = grid_search(&cfg)?;
    let stem = format!(
        "grid-{}-{}",
        cfg.method,
        if cfg.momentum.enabled { "mcl" } else { "base" }
    );
    let path = cfg.out_dir.join(format!("{stem}.csv"));
    atomic_write(&path, grid_to_csv(&outcome.points).as_bytes())?;
    for p in &outcome.points {
        match (p.val_class_il, &p.error) {
            (Some(score), _) => match p.tau {
                Some(tau) => println!("lr {:<8} tau {:<7} val_class_il {score:.2}", p.lr, tau),
                None => println!("lr {:<8} val_class_il {score:.2}", p.lr),
            },
            (None, Some(err)) => println!("lr {:<8} failed: {err}", p.lr),
            (None, None) => unreachable!("grid points are scored or failed"),
        }
    }
    match outcome.best_tau {
        Some(tau) => println!("best: lr {} tau {tau} (seed {})", outcome.best_lr, outcome.seed),
        None => println!("best: lr {} (seed {})", outcome.best_lr, outcome.seed),
    }
    println!("table written to {}", path.display());
    Ok(())
}

fn cmd_ablate(opts: &CommonOpts, knob: AblationKnob, values: &[String]) -> Result<()> {
    let cfg = load_config(opts)?;
    let values: Vec<String> =
        if values.is_empty() { knob.default_values() } else { values.to_vec() };
    let table = ablation_sweep(&cfg, knob, &values)?;
    let path = cfg.out_dir.join(format!("ablation-{knob}.csv"));
    atomic_write(&path, ablation_to_csv(&table).as_bytes())?;
    for row in &table.rows {
        println!(
            "{knob} {:<8} seed {}: class_il {:.2}  task_il {:.2}",
            row.value, row.seed, row.final_class_il, row.final_task_il
        );
    }
    println!("table written to {}", path.display());
    Ok(())
}

fn cmd_report(dir: &PathBuf) -> Result<()> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| Error::ingest(format!("{}: {e}", dir.display())))?;
    let mut records = Vec::new();
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(".run.toml")))
        .collect();
    paths.sort();
    for path in &paths {
        records.push(load_run_record(path)?);
    }
    if records.is_empty() {
        return Err(Error::ingest(format!(
            "no .run.toml records found in {}",
            dir.display()
        )));
    }
    let rows = summarize(&records);
    let path = dir.join("report.csv");
    atomic_write(&path, rows_to_csv(&rows).as_bytes())?;
    print!("{}", render_text(&rows));
    println!("table written to {}", path.display());
    Ok(())
}

fn cmd_baselines(opts: &CommonOpts) -> Result<()> {
    let cfg = load_config(opts)?;
    let outcome = baselines(&cfg)?;
    let path = cfg.out_dir.join("baselines.csv");
    atomic_write(&path, baselines_to_csv(&outcome).as_bytes())?;
    for row in &outcome.rows {
        println!(
            "seed {}: zero_shot {:.2}  joint {:.2} (lr {})",
            row.seed, row.zero_shot_class_il, row.joint_class_il, outcome.joint_lr
        );
    }
    println!("table written to {}", path.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Run(opts) => cmd_run(opts),
        Command::Grid(opts) => cmd_grid(opts),
        Command::Ablate { opts, knob, values } => cmd_ablate(opts, *knob, values),
        Command::Report { dir } => cmd_report(dir),
        Command::Baselines(opts) => cmd_baselines(opts),
    }
}

fn run_cli() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successful output; everything
            // else is a usage error.
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn main() {
    std::process::exit(run_cli());
}
