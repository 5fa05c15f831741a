//! Command-line front end for `pairsim`: JSON-configured experiments that
//! write CSV and JSON artifacts, with optional SVG plots.
//!
//! Exit codes: 0 success, 2 config error, 3 runtime fault (SOC guard,
//! phase timeout, non-finite state), 4 I/O error.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod plot;
pub mod suite;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

pub use commands::{Options, Report};
pub use error::{classify, CliError, ExitKind};

#[derive(Debug, Parser)]
#[command(name = "pairsim", version, about = "Imbalance and degradation experiments for two parallel-connected cells")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Also write SVG plots.
    #[arg(long)]
    pub plot: bool,
    /// Worker threads for batch work: 1 runs sequentially, 0 uses every core.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Seed for randomized suites; overrides the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Common {
    fn options(&self) -> Options {
        Options {
            config: self.config.clone(),
            out: self.out.clone(),
            plot: self.plot,
            workers: self.workers,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form trajectories of the linear-OCV pair.
    Analytic(Common),
    /// Time-stepping simulation of a protocol.
    Simulate(Common),
    /// Steady-state imbalance map over capacity and resistance ratios.
    Sweep(Common),
    /// Check simulated SOC imbalance against the input-to-state bound.
    Bounds(Common),
    /// Coupled degradation over many cycles.
    Degrade(Common),
    /// Compare aging tables (capacities and resistances per cycle).
    Compare {
        #[command(flatten)]
        common: Common,
        /// Reference aging CSV, e.g. measured values.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Model aging CSV to score against the reference.
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

pub fn run(cli: &Cli) -> Result<Report> {
    match &cli.command {
        Command::Analytic(c) => commands::cmd_analytic(&c.options()),
        Command::Simulate(c) => commands::cmd_simulate(&c.options()),
        Command::Sweep(c) => commands::cmd_sweep(&c.options()),
        Command::Bounds(c) => commands::cmd_bounds(&c.options()),
        Command::Degrade(c) => commands::cmd_degrade(&c.options()),
        Command::Compare {
            common,
            reference,
            model,
        } => commands::cmd_compare(&common.options(), reference.as_deref(), model.as_deref()),
    }
}
