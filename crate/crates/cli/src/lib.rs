//! Library side of the `geophase` command-line tool: configuration,
//! result tables and the experiment commands.

pub mod commands;
pub mod config;
pub mod table;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;

#[derive(Debug, Parser)]
#[command(
    name = "geophase",
    version,
    about = "Gauge dependence of geometric phases in quantum-trajectory unravellings"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML experiment configuration
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Preset to start from when no config file is given
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Output directory (overrides output.directory)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Master seed (overrides ensemble.master_seed)
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Master-equation path next to the exact solution
    Master,
    /// Ensemble sigma_z moments per gauge
    Trajectories,
    /// Total, dynamical and geometric phases across gauges
    PhaseScan,
    /// Averaged interference fringes and their fit
    Interference,
    /// Run the acceptance criteria
    Verify,
}

impl CommonArgs {
    pub fn resolve(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(_), Some(_)) => anyhow::bail!("--preset cannot be combined with --config (set `preset` in the file)"),
            (Some(path), None) => ExperimentConfig::load(path)?,
            (None, Some(name)) => ExperimentConfig::preset(name)?.finish()?,
            (None, None) => ExperimentConfig::preset(config::PRESETS[0])?.finish()?,
        };
        if let Some(dir) = &self.out {
            cfg.output.directory = dir.clone();
        }
        if let Some(seed) = self.seed {
            cfg.ensemble.master_seed = seed;
        }
        Ok(cfg)
    }
}

/// Runs a parsed command line; `Ok(false)` means the command completed but
/// its checks did not all pass.
pub fn run(cli: &Cli) -> anyhow::Result<bool> {
    let cfg = cli.common.resolve()?;
    let out = commands::Output::prepare(&cfg)?;
    let command = cli.command;
    let go = move || match command {
        Command::Master => commands::master(&cfg, &out),
        Command::Trajectories => commands::trajectories(&cfg, &out),
        Command::PhaseScan => commands::phase_scan(&cfg, &out),
        Command::Interference => commands::interference(&cfg, &out),
        Command::Verify => commands::verify(&cfg, &out),
    };
    match cli.common.threads {
        Some(n) if n > 0 => geophase::ensemble::with_workers(n, go)?,
        Some(_) => anyhow::bail!("--threads must be >= 1"),
        None => go(),
    }
}
