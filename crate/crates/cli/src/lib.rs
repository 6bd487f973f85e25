//! Command-line front end for the PAMC twin-experiment pipeline.

pub mod commands;
pub mod config;
pub mod csvio;
pub mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{cmd_assimilate, cmd_generate, cmd_predict, cmd_twin, TwinOutcome};
pub use config::RunConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "pamc", version, about = "Precision annealing Monte Carlo data assimilation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration, or a meta.json from an earlier run.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Input file: data.csv for assimilate, est_path.csv for predict.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Output directory; overrides `output_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Master seed; overrides `master_seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Simulate the truth and write noisy observations.
    Generate,
    /// Estimate paths and parameters from data.csv.
    Assimilate,
    /// Forecast from the lowest-action estimate.
    Predict,
    /// generate + assimilate + predict, scored against the truth.
    Twin,
}

impl Cli {
    pub fn resolve_config(&self) -> Result<RunConfig, CliError> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| CliError::Config("--config is required".into()))?;
        let mut cfg = RunConfig::load(path)?;
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(t) = self.threads {
            cfg.threads = Some(t);
        }
        if let Some(s) = self.seed {
            cfg.master_seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = cli.resolve_config()?;
    let input = |name: &str| cli.data.clone().unwrap_or_else(|| commands::out_file(&cfg, name));
    match cli.command {
        Command::Generate => cmd_generate(&cfg).map(drop),
        Command::Assimilate => cmd_assimilate(&cfg, &input("data.csv")).map(drop),
        Command::Predict => cmd_predict(&cfg, &input("est_path.csv")).map(drop),
        Command::Twin => cmd_twin(&cfg).map(drop),
    }
}
