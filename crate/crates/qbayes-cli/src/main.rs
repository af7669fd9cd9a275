//! `qbayes` — the pipeline driver.
//!
//! Subcommands cover the full workflow: `simulate` training triples,
//! `train` a quantile network, `sample` a posterior, `evaluate` on a
//! labelled test set, estimate a posterior `functional`, and run a
//! budget-matched `abc-compare` baseline.
//!
//! Configuration comes from an optional JSON file (`--config`); the
//! global flags `--seed`, `--out`, and `--threads` override the file.
//! Exit codes form a stable scripting contract: 0 success, 2
//! configuration/usage error, 3 I/O error, 4 numerical divergence.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "qbayes",
    version,
    about = "Density-free Bayesian posteriors via quantile networks"
)]
struct Cli {
    /// JSON run configuration; omitted → built-in defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Top-level seed; every stage derives its own stream from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker cap for simulation-parallel stages; affects wall time
    /// only, never results.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw (θ, y, τ) training triples from the configured model, or
    /// split a satellite CSV into train/test datasets.
    Simulate {
        /// Record count (overrides dataset.n_records).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Fit a quantile network; writes checkpoint.json and
    /// loss_history.csv.
    Train {
        /// Triple dataset to train on (default: the config's dataset
        /// path).
        #[arg(long, value_name = "PATH")]
        dataset: Option<PathBuf>,
        /// Continue from a checkpoint: optimizer state and epoch
        /// counter pick up where they left off.
        #[arg(long, value_name = "PATH")]
        resume: Option<PathBuf>,
        /// Total epoch horizon (overrides training.epochs, or the
        /// stored horizon when resuming).
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Draw M posterior samples for one observation.
    Sample {
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Comma-separated observation, e.g. --y-obs 1.3,0.4,0.9.
        #[arg(long)]
        y_obs: Option<String>,
        /// Draw count (overrides evaluation.m_draws).
        #[arg(long)]
        m: Option<usize>,
        /// Summary-net checkpoint applied to y before the quantile
        /// net.
        #[arg(long, value_name = "PATH")]
        summary: Option<PathBuf>,
    },
    /// Score a checkpoint on a labelled dataset (RMSE, CRPS, pinball,
    /// coverage); writes metric_report.json and residuals.csv.
    Evaluate {
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Test dataset (default: the config's dataset path).
        #[arg(long, value_name = "PATH")]
        dataset: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        summary: Option<PathBuf>,
    },
    /// Trapezoidal posterior functional E[f(θ)|y] for one observation.
    Functional {
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        y_obs: Option<String>,
        /// identity, square, or indicator:<t> (overrides
        /// evaluation.transform).
        #[arg(long)]
        transform: Option<String>,
        /// Interior quadrature nodes (overrides evaluation.n_nodes).
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, value_name = "PATH")]
        summary: Option<PathBuf>,
    },
    /// Budget-matched rejection-ABC baseline against the trained net.
    AbcCompare {
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        y_obs: Option<String>,
        /// Acceptance tolerance (overrides abc.epsilon).
        #[arg(long)]
        epsilon: Option<f64>,
        /// Prior-simulation budget (overrides abc.budget).
        #[arg(long)]
        budget: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> qbayes_core::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => config::RunConfig::load(path)?,
        None => config::RunConfig::default(),
    };
    cfg.apply_globals(cli.seed, cli.out, cli.threads);
    if let Some(t) = cfg.threads {
        // Sharded stages are order-deterministic, so the pool size
        // changes wall time only. A second init attempt (tests) is
        // harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let ctx = commands::Ctx::new(cfg)?;

    match &cli.command {
        Cmd::Simulate { n } => commands::cmd_simulate(&ctx, *n),
        Cmd::Train { dataset, resume, epochs } => {
            commands::cmd_train(&ctx, dataset.as_deref(), resume.as_deref(), *epochs)
        }
        Cmd::Sample { checkpoint, y_obs, m, summary } => commands::cmd_sample(
            &ctx,
            checkpoint.as_deref(),
            y_obs.as_deref(),
            *m,
            summary.as_deref(),
        ),
        Cmd::Evaluate { checkpoint, dataset, summary } => commands::cmd_evaluate(
            &ctx,
            checkpoint.as_deref(),
            dataset.as_deref(),
            summary.as_deref(),
        ),
        Cmd::Functional { checkpoint, y_obs, transform, n, summary } => {
            commands::cmd_functional(
                &ctx,
                checkpoint.as_deref(),
                y_obs.as_deref(),
                transform.as_deref(),
                *n,
                summary.as_deref(),
            )
        }
        Cmd::AbcCompare { checkpoint, y_obs, epsilon, budget } => commands::cmd_abc_compare(
            &ctx,
            checkpoint.as_deref(),
            y_obs.as_deref(),
            *epsilon,
            *budget,
        ),
    }
}

/// The documented exit-code contract. Configuration and usage
/// problems (including infeasible ABC tolerances, which carry a
/// minimum-distance hint) exit 2; file problems exit 3; numerical
/// divergence exits 4.
fn exit_code(e: &qbayes_core::Error) -> u8 {
    use qbayes_core::Error as E;
    match e {
        E::InvalidArgument(_) | E::ShapeMismatch(_) | E::NoAcceptedDraws { .. } => 2,
        E::Io(_) | E::Csv(_) | E::Parse(_) | E::Json(_) => 3,
        E::Divergence { .. } | E::NonFinite(_) => 4,
    }
}
