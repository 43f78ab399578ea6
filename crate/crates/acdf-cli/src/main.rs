//! `acdf`: synthetic wind-hazard pipeline — scenario generation, two-stage
//! training, forecast cycling, infrastructure risk, and evaluation.
//!
//! Every command is driven by one JSON config (all fields defaulted), writes
//! its outputs plus the resolved config into a per-command directory, and
//! closes with a content-hash manifest on stdout. Failures print a
//! machine-readable JSON error to stderr and exit nonzero. `ACDF_THREADS`
//! caps the worker pool.

mod commands;
mod config;
mod manifest;
mod store;

use std::path::PathBuf;

use anyhow::{Context, Result};
use chrono::{DateTime, Utc};
use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::manifest::Manifest;

#[derive(Parser)]
#[command(
    name = "acdf",
    version,
    about = "Coarse-to-fine wind forecasting and grid-infrastructure risk"
)]
struct Cli {
    /// Run configuration JSON; omitted means all defaults.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic event corpus (truth, forecasts, stations,
    /// terrain, network).
    Synth,
    /// Two-stage fit: freeze the terrain downscaler, then fit the bias
    /// corrector through it.
    Train {
        /// Event to exclude from training (leave-one-storm-out fold).
        #[arg(long)]
        hold_out: Option<String>,
    },
    /// One forecast cycle: correct the coarse forecast, downscale it, and
    /// write both grids with a timing report.
    Forecast {
        /// Event providing history and forecast data.
        #[arg(long)]
        event: String,
        /// RFC 3339 issue time, e.g. 2020-08-01T06:00:00Z.
        #[arg(long)]
        issue: String,
        /// Use the models of this leave-one-out fold instead of `all`.
        #[arg(long)]
        hold_out: Option<String>,
    },
    /// Tower and line failure probabilities for a network under a wind grid.
    Risk {
        /// Fine wind grid (.acdf).
        #[arg(long)]
        wind: PathBuf,
        /// Network description (.json).
        #[arg(long)]
        network: PathBuf,
    },
    /// Leave-one-event-out skill report with terrain and wind strata.
    Eval,
}

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => {
            let config = RunConfig::default();
            config.validate()?;
            Ok(config)
        }
    }
}

/// Honor `ACDF_THREADS` before any parallel region spins up.
fn init_threads() -> Result<()> {
    if let Ok(raw) = std::env::var("ACDF_THREADS") {
        let n: usize = raw
            .parse()
            .with_context(|| format!("ACDF_THREADS={raw} is not a thread count"))?;
        if n == 0 {
            anyhow::bail!("ACDF_THREADS must be >= 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("initializing worker pool")?;
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<Manifest> {
    init_threads()?;
    let config = load_config(cli.config.as_ref())?;
    match &cli.command {
        Command::Synth => commands::synth::run(&config),
        Command::Train { hold_out } => commands::train::run(&config, hold_out.as_deref()),
        Command::Forecast {
            event,
            issue,
            hold_out,
        } => {
            let issue_time: DateTime<Utc> = DateTime::parse_from_rfc3339(issue)
                .with_context(|| format!("issue time {issue} is not RFC 3339"))?
                .with_timezone(&Utc);
            commands::forecast::run(&config, event, issue_time, hold_out.as_deref())
        }
        Command::Risk { wind, network } => commands::risk::run(&config, wind, network),
        Command::Eval => commands::eval::run(&config),
    }
}

fn main() {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(manifest) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&manifest).expect("manifest serializes")
            );
        }
        Err(err) => {
            let envelope = serde_json::json!({
                "error": { "message": format!("{err:#}") }
            });
            eprintln!("{envelope}");
            std::process::exit(1);
        }
    }
}
