//! Command-line driver: configuration, subcommands and CSV output.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde_json::Value;

use crate::commands::Context;
use crate::config::ExperimentConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "mfdl", version, about = "Mean-field theory and Monte-Carlo ensembles of deep dropout networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// JSON experiment configuration; missing fields take defaults
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads (results do not depend on it)
    #[arg(long, global = true, env = "MFDL_THREADS")]
    pub threads: Option<usize>,

    /// Gauss quadrature order
    #[arg(long, global = true)]
    pub quad_order: Option<usize>,

    /// Ensemble size
    #[arg(long, global = true)]
    pub instances: Option<usize>,

    /// Omit the timestamp comment line so reruns are byte-identical
    #[arg(long, global = true)]
    pub no_header_timestamp: bool,

    /// Override a config field, e.g. `--set phase.activation=relu`
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Length or correlation map and its iterates, optionally with ensembles
    Lengthmap,
    /// Per-layer gradient metrics from ensembles, with theory baselines
    Gradsim,
    /// Variance-vs-mean power-law fits of the gradient metrics
    Universality,
    /// Depth scales and trainable-length bounds over a σw² grid
    Phase,
    /// σw² at which χ1 = 1
    CriticalLine,
    /// q*, c*, χ1, χ2 and depth scales at one point
    FixedPoint,
}

impl Cli {
    /// Config file, then `--set` overrides, then the dedicated flags.
    pub fn resolve_config(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        for s in &self.overrides {
            cfg.set(s)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(t) = self.threads {
            cfg.threads = Some(t);
        }
        if let Some(q) = self.quad_order {
            cfg.quad_order = q;
        }
        if let Some(n) = self.instances {
            cfg.instances = n;
        }
        Ok(cfg)
    }
}

pub fn run_command(command: Command, ctx: &Context) -> Result<Value, CliError> {
    match command {
        Command::Lengthmap => commands::lengthmap(ctx),
        Command::Gradsim => commands::gradsim(ctx),
        Command::Universality => commands::universality(ctx),
        Command::Phase => commands::phase(ctx),
        Command::CriticalLine => commands::critical_line(ctx),
        Command::FixedPoint => commands::fixed_point(ctx),
    }
}

/// Resolves the configuration and runs the command inside a thread pool of
/// the requested size.
pub fn run(cli: &Cli) -> Result<Value, CliError> {
    let cfg = cli.resolve_config()?;
    let threads = cfg.threads;
    let ctx = Context::new(cfg, cli.out.clone(), !cli.no_header_timestamp)?;
    match threads {
        Some(0) => Err(CliError::Usage("threads must be >= 1".to_owned())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?
            .install(|| run_command(cli.command, &ctx)),
        None => run_command(cli.command, &ctx),
    }
}
