//! `gramstab`: desk-scale experiments on Gramian feedback stabilization of
//! the bilinear Schrodinger system.

// validations use the negated form `!(x > 0.0)` on purpose: it rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{error::ErrorKind, Parser, Subcommand};

use commands::{CliFailure, Outcome, SimulateMode};
use config::ExperimentConfig;

#[derive(Parser, Debug)]
#[command(name = "gramstab", version, about = "Gramian stabilization laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON experiment configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Report-table format: csv or json.
    #[arg(long, global = true)]
    format: Option<String>,

    /// Dipole identifier, e.g. "builtin:xsq" or "poly:[0,0,1]".
    #[arg(long, global = true)]
    mu: Option<String>,

    #[arg(long = "n-modes", global = true)]
    n_modes: Option<usize>,

    #[arg(long, global = true)]
    lambda: Option<f64>,

    #[arg(long = "lambda-hat", global = true)]
    lambda_hat: Option<f64>,

    #[arg(long, global = true)]
    horizon: Option<f64>,

    #[arg(long, global = true)]
    dt: Option<f64>,

    #[arg(long, global = true)]
    epsilon: Option<f64>,

    /// Linear-mode stepper: rk4 or expm.
    #[arg(long, global = true)]
    integrator: Option<String>,

    /// mu-check pass threshold on min k^3 |b_k|.
    #[arg(long, global = true)]
    threshold: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the genericity condition on the dipole profile.
    MuCheck,
    /// Build and export the damped Gramian.
    Gramian,
    /// Run a closed-loop simulation.
    Simulate {
        #[arg(long, value_enum)]
        mode: SimulateMode,
    },
    /// Minimal-energy steering cost over an (N, T) grid.
    Cost,
    /// sigma_min(Q(lambda)) scaling scan.
    ScanLambda,
}

fn effective_config(cli: &Cli) -> Result<ExperimentConfig, CliFailure> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path).map_err(CliFailure::Usage)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(format) = &cli.format {
        cfg.format = format.clone();
    }
    if let Some(mu) = &cli.mu {
        cfg.mu_id = mu.clone();
    }
    if let Some(n) = cli.n_modes {
        cfg.n_modes = n;
    }
    if let Some(l) = cli.lambda {
        cfg.lambda = l;
    }
    if let Some(l) = cli.lambda_hat {
        cfg.lambda_hat = l;
    }
    if let Some(t) = cli.horizon {
        cfg.horizon = t;
    }
    if let Some(dt) = cli.dt {
        cfg.dt = dt;
    }
    if let Some(eps) = cli.epsilon {
        cfg.epsilon = eps;
    }
    if let Some(integrator) = &cli.integrator {
        cfg.integrator = integrator.clone();
    }
    if let Some(th) = cli.threshold {
        cfg.mu_threshold = th;
    }
    Ok(cfg)
}

fn configure_threads() -> Result<(), CliFailure> {
    if let Ok(raw) = std::env::var("GRAMSTAB_THREADS") {
        let n: usize = raw
            .parse()
            .map_err(|_| CliFailure::Usage(format!("GRAMSTAB_THREADS={raw:?} is not a count")))?;
        if n == 0 {
            return Err(CliFailure::Usage("GRAMSTAB_THREADS must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliFailure::Runtime(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run() -> Result<Outcome, CliFailure> {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(Outcome::Success);
        }
        Err(e) => return Err(CliFailure::Usage(e.to_string())),
    };
    configure_threads()?;
    let cfg = effective_config(&cli)?;
    match cli.command {
        Command::MuCheck => commands::cmd_mu_check(&cfg),
        Command::Gramian => commands::cmd_gramian(&cfg),
        Command::Simulate { mode } => commands::cmd_simulate(&cfg, mode),
        Command::Cost => commands::cmd_cost(&cfg),
        Command::ScanLambda => commands::cmd_scan_lambda(&cfg),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::ConditionFailure(msg)) => {
            eprintln!("condition failed: {msg}");
            ExitCode::from(2)
        }
        Ok(Outcome::ToleranceFailure(msg)) => {
            eprintln!("tolerance failed: {msg}");
            ExitCode::from(3)
        }
        Err(CliFailure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(64)
        }
        Err(CliFailure::Runtime(msg)) => {
            eprintln!("runtime error: {msg}");
            ExitCode::from(65)
        }
    }
}
