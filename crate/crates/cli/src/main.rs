//! `tev`: command-line driver for the trivial-event speaker verification
//! pipeline. Each subcommand reads and writes one stage's artifacts.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;

use config::PipelineConfig;

/// Environment variable giving the default worker thread count.
const THREADS_ENV: &str = "TEV_THREADS";

#[derive(Debug, Parser)]
#[command(name = "tev", version, about = "Speaker verification on short non-linguistic vocal events")]
struct Cli {
    /// TOML pipeline config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for every randomized stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Byte-identical outputs across runs (seed defaults to 0).
    #[arg(long, global = true)]
    deterministic: bool,
    /// Worker threads [env: TEV_THREADS]; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: commands::Command,
}

fn init_threads(flag: Option<usize>) -> Result<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) if v.trim().is_empty() => None,
            Ok(v) => Some(v.trim().parse().with_context(|| format!("{THREADS_ENV}={v:?} is not a count"))?),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_threads(cli.threads)?;
    let mut cfg = PipelineConfig::load(cli.config.as_deref())?;
    cfg.deterministic |= cli.deterministic;
    let seed = cfg.resolve_seed(cli.seed);
    log::debug!("seed {seed}");
    commands::run(cli.command, cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tev: error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
