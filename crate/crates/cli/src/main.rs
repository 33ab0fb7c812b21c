//! `wrinkle`: batch front end for minimizing `F_∞`, building recovery
//! fields, evaluating `F_L` and checking the numerical properties.
//!
//! Exit codes: 0 on success, 1 on a numerical failure, 2 on a usage or
//! configuration error.  `WRINKLE_THREADS` caps the worker threads.

mod check;
mod commands;
mod config;
mod failure;
mod svg;

use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Parser, Subcommand};

use crate::config::{CommonArgs, RunConfig, DEFAULT_L_VALUES, DEFAULT_RECOVER_L};
use crate::failure::Failure;

#[derive(Debug, Parser)]
#[command(name = "wrinkle", version, about = "Wrinkling of thin sheets: limit functional, recovery fields and energy gaps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Minimize F_∞ and write the minimizer, its summary and plots.
    Solve(CommonArgs),
    /// Build the displacement field (w1, w2, u) at one value of L.
    Recover(CommonArgs),
    /// Evaluate the terms of F_L for the recovery at each L.
    Energy(CommonArgs),
    /// Tabulate the gap F_L − F_∞ over a list of L.
    Gamma(CommonArgs),
    /// Run the property suite and write a pass/fail report.
    Check {
        #[command(flatten)]
        common: CommonArgs,
        /// Inflate one row of the measure to violate the mass constraint.
        #[arg(long)]
        break_constraint: bool,
    },
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("WRINKLE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Failure::usage(anyhow!("WRINKLE_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(Failure::usage)
}

fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    match cli.command {
        Command::Solve(a) => commands::cmd_solve(&RunConfig::resolve(&a, &DEFAULT_L_VALUES)?),
        Command::Recover(a) => commands::cmd_recover(&RunConfig::resolve(&a, &[DEFAULT_RECOVER_L])?),
        Command::Energy(a) => commands::cmd_energy(&RunConfig::resolve(&a, &DEFAULT_L_VALUES)?),
        Command::Gamma(a) => commands::cmd_gamma(&RunConfig::resolve(&a, &DEFAULT_L_VALUES)?),
        Command::Check { common, break_constraint } => {
            commands::cmd_check(&RunConfig::resolve(&common, &DEFAULT_L_VALUES)?, break_constraint)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
