//! Command-line driver for the multifair engines: configuration, experiment
//! orchestration and CSV output.

pub mod config;
pub mod engines;
pub mod output;
pub mod verify;

use std::io::Write;
use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

pub use config::{Engine, ExperimentConfig};
pub use output::{sig9, write_results, write_rows, ResultRow};

#[derive(Debug, Parser)]
#[command(name = "multifair", version, about = "Multi-resource fair sharing experiments")]
pub struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the static allocation of each objective with a property report.
    Alloc(RunArgs),
    /// Fluid-model simulation at each load point.
    FluidSim(RunArgs),
    /// Stationary distribution of the fluid model at each load point.
    Stationary(RunArgs),
    /// Packet-level simulation at each load point.
    PacketSim(RunArgs),
    /// Run the engine named in the config over its load grid.
    Sweep(RunArgs),
    /// Run the built-in oracle checks; exits nonzero on any failure.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML experiment config.
    pub config: PathBuf,
    /// CSV destination; overrides the config's `output`. `-` for stdout.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, env = "MULTIFAIR_SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, env = "MULTIFAIR_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Random instances for the solver checks.
    #[arg(long, default_value_t = 300)]
    pub instances: usize,
}

/// Runs a parsed command line. Returns `false` when `verify` found a failure.
pub fn run(cli: Cli) -> anyhow::Result<bool> {
    let (args, engine) = match cli.command {
        Command::Verify(args) => return Ok(verify_command(&args)),
        Command::Alloc(args) => {
            let config = ExperimentConfig::load(&args.config)?;
            print!("{}", engines::alloc_report(&config)?);
            if let Some(path) = args.output.as_ref().or(config.output.as_ref()) {
                let rows = engines::execute(&config, Engine::StaticAlloc, 0)?;
                emit(&rows, path)?;
            }
            return Ok(true);
        }
        Command::FluidSim(args) => (args, Some(Engine::FluidSim)),
        Command::Stationary(args) => (args, Some(Engine::Stationary)),
        Command::PacketSim(args) => (args, Some(Engine::PacketSim)),
        Command::Sweep(args) => (args, None),
    };
    let config = ExperimentConfig::load(&args.config)?;
    let engine = match engine.or(config.engine) {
        Some(e) => e,
        None => anyhow::bail!("{}: `sweep` needs an `engine` in the config", args.config.display()),
    };
    let seed = args.seed.unwrap_or(config.seed);
    log::info!("{}: {engine}, seed {seed}", config.scenario);
    let rows = engines::execute(&config, engine, seed).with_context(|| format!("{} run failed", engine))?;
    let path = args.output.or(config.output).unwrap_or_else(|| PathBuf::from("-"));
    emit(&rows, &path)?;
    Ok(true)
}

fn emit(rows: &[ResultRow], path: &std::path::Path) -> anyhow::Result<()> {
    if path.as_os_str() == "-" {
        let stdout = std::io::stdout();
        let mut lock = stdout.lock();
        write_rows(rows, &mut lock)?;
        lock.flush()?;
        Ok(())
    } else {
        write_results(rows, path)?;
        log::info!("wrote {} rows to {}", rows.len(), path.display());
        Ok(())
    }
}

fn verify_command(args: &VerifyArgs) -> bool {
    let mut all = true;
    for check in verify::run_checks(args.seed, args.instances) {
        println!("{} {}: {}", if check.passed { "ok  " } else { "FAIL" }, check.name, check.detail);
        all &= check.passed;
    }
    all
}
