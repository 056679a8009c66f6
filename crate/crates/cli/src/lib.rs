//! Config-driven runner for worldline kernel scans, energy fits, `P(v)`
//! histograms and classical-trajectory studies. Every command writes one CSV
//! with a `#` metadata block and, next to it, a TOML run manifest.

pub mod commands;
pub mod config;
pub mod output;
pub mod validate;

use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::config::{ExperimentConfig, Resolved};
use crate::output::{manifest_path, write_atomic, CsvDoc, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "worldline", version, about = "Worldline Monte Carlo for Euclidean propagators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the unit loops of the configured ensemble.
    GenerateLoops(RunArgs),
    /// Estimate ln K on the configured t grid.
    KernelScan(RunArgs),
    /// Fit the energy from the slope of ln K.
    EnergyFit(RunArgs),
    /// Histogram the path-averaged potential.
    PvHist(RunArgs),
    /// Dominant and weighted-average trajectories against the classical path.
    Classical(RunArgs),
    /// Run the fast invariant checks.
    Validate {
        #[arg(long)]
        threads: Option<usize>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output CSV; falls back to `[output] path`, then stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `[ensemble] seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Exit status for a fit whose window could not be found.
pub const EXIT_WINDOW_NOT_FOUND: i32 = 3;

fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let n = threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    anyhow::ensure!(n >= 1, "threads must be at least 1");
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .context("cannot start worker threads")
}

pub type CommandFn = fn(&Resolved, &mut RunManifest) -> Result<CsvDoc>;

fn command_fn(cmd: &Command) -> Option<(&'static str, CommandFn, &RunArgs)> {
    match cmd {
        Command::GenerateLoops(a) => Some(("generate-loops", commands::generate_loops, a)),
        Command::KernelScan(a) => Some(("kernel-scan", commands::kernel_scan, a)),
        Command::EnergyFit(a) => Some(("energy-fit", commands::energy_fit, a)),
        Command::PvHist(a) => Some(("pv-hist", commands::pv_hist, a)),
        Command::Classical(a) => Some(("classical", commands::classical, a)),
        Command::Validate { .. } => None,
    }
}

/// Run a configured command and write its outputs. Returns the output path.
pub fn execute(name: &str, f: CommandFn, args: &RunArgs) -> Result<Option<PathBuf>> {
    let config = ExperimentConfig::load(&args.config)?;
    let resolved = config.resolve(args.seed)?;
    let threads = args.threads.or(resolved.config.output.threads);
    let pool = thread_pool(threads)?;
    let mut manifest = RunManifest {
        command: name.to_string(),
        tool_version: commands::VERSION.to_string(),
        config_sha256: resolved.hash.clone(),
        seed: resolved.seed,
        threads: pool.current_num_threads(),
        config: resolved.config.to_toml()?,
        ..Default::default()
    };
    let doc = pool.install(|| f(&resolved, &mut manifest))?;
    let bytes = doc.render()?;
    for w in &manifest.warnings {
        eprintln!("warning: {w}");
    }
    match args.out.clone().or_else(|| resolved.config.output.path.clone()) {
        Some(path) => {
            write_atomic(&path, &bytes)?;
            write_atomic(&manifest_path(&path), manifest.to_toml()?.as_bytes())?;
            Ok(Some(path))
        }
        None => {
            std::io::stdout().write_all(&bytes)?;
            Ok(None)
        }
    }
}

/// Run the invariant suite, printing one line per check. True when all pass.
pub fn run_validate(threads: Option<usize>) -> Result<bool> {
    let pool = thread_pool(threads)?;
    let checks = pool.install(validate::run_all);
    for c in &checks {
        println!("{}", c.line());
    }
    Ok(checks.iter().all(|c| c.passed()))
}

/// Exit status for `cli`: 0 on success, 3 when no fit window exists, 1 otherwise.
pub fn main_with(cli: Cli) -> i32 {
    let result = match command_fn(&cli.command) {
        Some((name, f, args)) => execute(name, f, args).map(|_| true),
        None => match cli.command {
            Command::Validate { threads } => run_validate(threads),
            _ => unreachable!(),
        },
    };
    match result {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<worldline_core::Error>() {
                Some(worldline_core::Error::WindowNotFound) => EXIT_WINDOW_NOT_FOUND,
                _ => 1,
            }
        }
    }
}
