use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};
use matinfer::config::RunConfig;
use matinfer::{run, service, Overrides};

#[derive(Parser)]
#[command(name = "matinfer", version, about = "Estimate procedural material parameters from a flash-lit photograph")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for the random inputs and the sampler.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Image resolution (power of two).
    #[arg(long, global = true)]
    resolution: Option<usize>,
    /// Parameter record to start from.
    #[arg(long = "init-from", global = true)]
    init_from: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic target from the configured ground truth.
    Synth,
    /// MAP estimate for the target.
    Fit,
    /// Sample the posterior into a chain file.
    Sample,
    /// Render a parameter record (default: the synthetic ground truth).
    Render { record: Option<PathBuf> },
    /// Serve chains and renders over HTTP.
    Serve,
    /// Write the model manifest and chains as CSV.
    Export,
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let path = cli.config.context("--config is required")?;
    let mut cfg = RunConfig::load(&path)?;
    Overrides { seed: cli.seed, out: cli.out, resolution: cli.resolution, init_from: cli.init_from }.apply(&mut cfg);
    match cli.command {
        Command::Synth => {
            run::synth(&cfg)?;
        }
        Command::Fit => {
            let record = run::fit(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&record)?);
        }
        Command::Sample => {
            let out = run::sample(&cfg)?;
            println!("{} ({} samples, acceptance {:.3})", out.chain_path.display(), out.stats.samples, out.stats.acceptance_rate());
        }
        Command::Render { record } => {
            let record = record.unwrap_or_else(|| cfg.out.join(run::THETA_STAR));
            run::render(&cfg, &record)?;
        }
        Command::Serve => service::serve(&cfg)?,
        Command::Export => {
            println!("{}", run::export(&cfg)?.display());
        }
    }
    Ok(())
}
