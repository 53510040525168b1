use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use r2se_core::harness::commands;
use r2se_core::harness::RunConfig;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "r2se", version, about = "Hard-case refinement pipeline for trajectory planners")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the train and test clip files.
    GenData(Args),
    /// Pretrain the generalist.
    Pretrain(Args),
    /// Score the training set and select hard cases.
    Allocate(Args),
    /// Train the adapter ensemble on the hard cases.
    Refine(Args),
    /// Fit the uncertainty tail model.
    FitGate(Args),
    /// Evaluate generalist and gated policy.
    Eval(Args),
    /// Summarize the evaluation tables.
    Report(Args),
    /// Run the component ablation.
    Ablate(Args),
}

#[derive(clap::Args)]
struct Args {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the master seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, default_value = "run")]
    out: PathBuf,
}

impl Args {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config).with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

fn print<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let args = match &cli.command {
        Command::GenData(a)
        | Command::Pretrain(a)
        | Command::Allocate(a)
        | Command::Refine(a)
        | Command::FitGate(a)
        | Command::Eval(a)
        | Command::Report(a)
        | Command::Ablate(a) => a,
    };
    let cfg = args.load()?;
    let out = &args.out;
    match cli.command {
        Command::GenData(_) => print(&commands::cmd_gen_data(&cfg, out)?),
        Command::Pretrain(_) => print(&commands::cmd_pretrain(&cfg, out)?),
        Command::Allocate(_) => print(&commands::cmd_allocate(&cfg, out)?),
        Command::Refine(_) => print(&commands::cmd_refine(&cfg, out)?),
        Command::FitGate(_) => print(&commands::cmd_fit_gate(&cfg, out)?.params),
        Command::Eval(_) => print(&commands::cmd_eval(&cfg, out)?),
        Command::Report(_) => print(&commands::cmd_report(&cfg, out)?),
        Command::Ablate(_) => print(&commands::cmd_ablate(&cfg, out)?),
    }
}
