//! `isac`: optimize ISAC waveforms, run Monte Carlo sweeps and compare
//! allocation methods from a JSON run configuration.
//!
//! Exit status: 0 on success with a feasible result, 2 when the result is
//! infeasible (or a waveform cannot support delay estimation), 1 on usage or
//! configuration errors.

// `!(x > 0.0)` is meant: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use isac_core::harness::Method;

use crate::commands::{Outcome, RunContext};
use crate::config::{RunConfig, Verbosity};

#[derive(Debug, Parser)]
#[command(name = "isac", version, about = "Bistatic OFDM ISAC waveform optimization and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides output.dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed (overrides seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte Carlo trials per point (overrides sweep.trials).
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Worker threads for trials and sweep points.
    #[arg(long, global = true, env = "ISAC_THREADS")]
    threads: Option<usize>,
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Optimize one waveform; writes waveform.csv, summary.json and trace.csv.
    Optimize {
        /// JPCDE (the optimizer) or one of the baselines.
        #[arg(long, default_value = "JPCDE")]
        method: Method,
    },
    /// Run the configured sweep; writes aggregate.csv, fig3_data.csv and fig4_data.csv.
    Sweep,
    /// Monte Carlo estimation with a fixed waveform; writes trials.csv.
    Estimate {
        /// Waveform CSV as written by `optimize`.
        #[arg(long)]
        waveform: PathBuf,
    },
    /// Rank methods per sweep point; writes comparison.csv.
    Compare {
        /// Existing aggregate.csv; the sweep is run when omitted.
        #[arg(long)]
        aggregate: Option<PathBuf>,
    },
}

fn init_logging(quiet: bool, verbosity: Verbosity) {
    let level = match (quiet, verbosity) {
        (true, _) | (_, Verbosity::Quiet) => log::LevelFilter::Error,
        (_, Verbosity::Normal) => log::LevelFilter::Info,
        (_, Verbosity::Verbose) => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .init();
}

fn run(cli: Cli) -> Result<Outcome> {
    let (mut config, bytes) = match &cli.config {
        Some(path) => {
            let (c, raw) = RunConfig::load(path)?;
            (c, Some(raw))
        }
        None => (RunConfig::default(), None),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(trials) = cli.trials {
        config.sweep.trials = trials;
    }
    if let Some(out) = &cli.out {
        config.output.dir = out.clone();
    }
    init_logging(cli.quiet, config.verbosity);
    config.validate()?;
    if let Some(n) = cli.threads {
        if n == 0 {
            anyhow::bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }

    let ctx = RunContext {
        out_dir: config.output.dir.clone(),
        config,
        config_path: cli.config.clone(),
        config_bytes: bytes,
    };
    match &cli.command {
        Command::Optimize { method } => commands::optimize_cmd(&ctx, *method),
        Command::Sweep => commands::sweep_cmd(&ctx),
        Command::Estimate { waveform } => commands::estimate_cmd(&ctx, waveform),
        Command::Compare { aggregate } => commands::compare_cmd(&ctx, aggregate.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let informational = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if informational { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    match run(cli) {
        Ok(Outcome::Feasible) => ExitCode::SUCCESS,
        Ok(Outcome::Infeasible) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
