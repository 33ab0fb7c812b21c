//! Run configuration: an optional JSON file merged with command-line flags.
//!
//! Every field may come from the file or from a flag; a flag always wins.
//! The merged [`RunConfig`] is validated before any computation starts.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, ValueEnum};
use serde::Deserialize;
use wrinkle_core::limit_solver::{Initialization, SolverConfig};
use wrinkle_core::recovery::RecoveryConfig;

use crate::failure::Failure;

/// Values of `L` used by `energy`, `gamma` and `check` when none are given.
pub const DEFAULT_L_VALUES: [f64; 4] = [8.0, 16.0, 32.0, 64.0];

/// The value of `L` used by `recover` when none is given.
pub const DEFAULT_RECOVER_L: f64 = 16.0;

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON configuration file; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of x-nodes of the solver grid on (0, 1].
    #[arg(long)]
    pub nx: Option<usize>,
    /// Largest frequency of the solver comb.
    #[arg(long = "kmax")]
    pub k_max: Option<f64>,
    /// Half period of the solver comb (π/L_eff)ℤ.
    #[arg(long = "L-eff")]
    pub l_eff: Option<f64>,
    /// KKT tolerance of the solver.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Iteration cap of the solver.
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Seed of the random initialization.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Starting point of the solver.
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
    /// Reuse a measure table written by `solve` instead of solving.
    #[arg(long)]
    pub measure: Option<PathBuf>,
    /// Thickness parameters L, comma separated.
    #[arg(long = "L", value_delimiter = ',')]
    pub l: Option<Vec<f64>>,
    /// Number of cells of the recovery grid on [−1, 1] (even).
    #[arg(long)]
    pub x_intervals: Option<usize>,
    /// Number of y-samples per period in the written in-plane fields.
    #[arg(long)]
    pub y_samples: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Balance,
    Uniform,
    Random,
}

impl From<InitArg> for Initialization {
    fn from(a: InitArg) -> Self {
        match a {
            InitArg::Balance => Initialization::Balance,
            InitArg::Uniform => Initialization::Uniform,
            InitArg::Random => Initialization::Random,
        }
    }
}

/// The JSON file layout.  Unknown keys are rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub solver: SolverSection,
    pub measure: Option<PathBuf>,
    #[serde(rename = "L")]
    pub l: Option<Vec<f64>>,
    pub x_intervals: Option<usize>,
    pub y_samples: Option<usize>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub nx: Option<usize>,
    #[serde(rename = "L_eff")]
    pub l_eff: Option<f64>,
    pub k_max: Option<f64>,
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub seed: Option<u64>,
    pub init: Option<Initialization>,
}

/// A fully resolved and validated configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub solver: SolverConfig,
    pub measure: Option<PathBuf>,
    pub l_values: Vec<f64>,
    pub recovery: RecoveryConfig,
    pub y_samples: Option<usize>,
    pub out: PathBuf,
}

/// Parse a configuration file.  An empty file is an error, not a default.
pub fn load_file(path: &Path) -> Result<FileConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))
        .map_err(Failure::usage)?;
    if text.trim().is_empty() {
        return Err(Failure::usage(anyhow!("config file {} is empty", path.display())));
    }
    serde_json::from_str(&text)
        .with_context(|| format!("config file {} does not match the schema", path.display()))
        .map_err(Failure::usage)
}

impl RunConfig {
    /// Merge flags over the file over the defaults, then validate.
    pub fn resolve(args: &CommonArgs, default_l: &[f64]) -> Result<RunConfig, Failure> {
        let file = match &args.config {
            Some(p) => load_file(p)?,
            None => FileConfig::default(),
        };
        let d = SolverConfig::default();
        let s = &file.solver;
        let solver = SolverConfig {
            nx: args.nx.or(s.nx).unwrap_or(d.nx),
            l_eff: args.l_eff.or(s.l_eff).unwrap_or(d.l_eff),
            k_max: args.k_max.or(s.k_max).unwrap_or(d.k_max),
            kkt_tol: args.tol.or(s.tol).unwrap_or(d.kkt_tol),
            max_iters: args.max_iters.or(s.max_iters).unwrap_or(d.max_iters),
            seed: args.seed.or(s.seed).unwrap_or(d.seed),
            init: args.init.map(Initialization::from).or(s.init).unwrap_or(d.init),
            ..d
        };
        let rd = RecoveryConfig::default();
        let cfg = RunConfig {
            solver,
            measure: args.measure.clone().or(file.measure),
            l_values: args.l.clone().or(file.l).unwrap_or_else(|| default_l.to_vec()),
            recovery: RecoveryConfig { x_intervals: args.x_intervals.or(file.x_intervals).unwrap_or(rd.x_intervals), ..rd },
            y_samples: args.y_samples.or(file.y_samples),
            out: args.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("wrinkle-out")),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), Failure> {
        self.solver.validate().context("invalid solver configuration").map_err(Failure::usage)?;
        if self.l_values.is_empty() {
            return Err(Failure::usage(anyhow!("the list of L values is empty")));
        }
        if let Some(l) = self.l_values.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Failure::usage(anyhow!("L must be positive and finite, got {l}")));
        }
        let n = self.recovery.x_intervals;
        if n < 2 || n % 2 != 0 {
            return Err(Failure::usage(anyhow!("x_intervals must be even and at least 2, got {n}")));
        }
        if let Some(m) = self.y_samples {
            if m < 2 {
                return Err(Failure::usage(anyhow!("y_samples must be at least 2, got {m}")));
            }
        }
        if let Some(p) = &self.measure {
            if !p.is_file() {
                return Err(Failure::usage(anyhow!("measure file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// The single value of `L` required by `recover`.
    pub fn single_l(&self) -> Result<f64, Failure> {
        match self.l_values.as_slice() {
            [l] => Ok(*l),
            ls => Err(Failure::usage(anyhow!("recover takes exactly one value of L, got {}", ls.len()))),
        }
    }
}
