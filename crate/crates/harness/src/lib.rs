//! Experiment orchestration for the `mrlco` command-line tool.

pub mod commands;
pub mod config;
pub mod datasets;
pub mod io;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use config::ExperimentConfig;

/// Environment variable holding the worker-thread count.
pub const WORKERS_ENV: &str = "MRLCO_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "mrlco", version, about = "Meta-RL computation offloading experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the experiment's datasets.
    Generate(Common),
    /// Meta-train a policy over the training datasets.
    TrainMeta(Common),
    /// Pretrain the fine-tuning baseline over the training datasets.
    TrainFinetune(Common),
    /// Adaptation curves on the test datasets.
    Adapt(Common),
    /// Heuristic and optimal latencies on the test datasets.
    Baseline(Common),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub desk_scale: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Common {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config, self.desk_scale)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Generate(c) => commands::generate(&c.resolve()?),
        Command::TrainMeta(c) => commands::train_meta(&c.resolve()?),
        Command::TrainFinetune(c) => commands::train_finetune(&c.resolve()?),
        Command::Adapt(c) => commands::run_adapt(&c.resolve()?),
        Command::Baseline(c) => commands::run_baseline(&c.resolve()?),
    }
}

/// Runs on a dedicated pool of `workers` threads (0 = rayon's default).
pub fn run_with_workers(cli: &Cli, workers: usize) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("building worker pool")?;
    pool.install(|| run(cli))
}

pub fn workers_from_env() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v.trim().parse().with_context(|| format!("{WORKERS_ENV}={v} is not a count")),
        Err(_) => Ok(0),
    }
}
