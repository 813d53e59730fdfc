//! `khorder`: parameter counts, training runs, rate studies and diagnostics.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use crate::config::{Family, Preset, RunConfig};

#[derive(Parser)]
#[command(name = "khorder", version, about = "K-HOrderDNN, HOrderDNN and PINN experiments")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Single seed, replacing the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
    /// Output directory (default `$KHORDER_OUT/<problem>`, root `runs`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Problem id, replacing `problem.id`.
    #[arg(long, global = true)]
    problem: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the exact parameter count of a model.
    CountParams(CountArgs),
    /// Train on a fitting problem.
    Fit,
    /// Train on a PDE problem.
    Solve,
    /// Convergence-rate sweep, written to rates.csv.
    Rates,
    /// Frequency diagnostics of a checkpoint, written to spectrum.csv.
    Spectrum(CheckpointArgs),
    /// Pointwise errors of a checkpoint on the x1-x2 grid, written to slice.csv.
    Slice(CheckpointArgs),
}

#[derive(Args)]
struct CountArgs {
    #[arg(long, value_enum)]
    family: Option<Family>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    /// PINN / HOrderDNN depth L.
    #[arg(long)]
    depth: Option<usize>,
    /// PINN / HOrderDNN width W.
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    hd: Option<usize>,
    #[arg(long)]
    hw: Option<usize>,
    #[arg(long)]
    gd: Option<usize>,
    #[arg(long)]
    gw: Option<usize>,
}

#[derive(Args)]
struct CheckpointArgs {
    #[arg(long)]
    checkpoint: PathBuf,
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut config = RunConfig::load(cli.config.as_deref(), cli.preset, cli.problem.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seeds = vec![seed];
    }
    if let Some(out) = &cli.out {
        config.out = Some(out.clone());
    }
    if let Some(threads) = cli.threads {
        config.threads = threads;
    }
    Ok(config)
}

fn count_params(config: RunConfig, args: &CountArgs) -> Result<()> {
    let d = match args.d.or(config.problem.d) {
        Some(d) => d,
        None => config.build_problem()?.d(),
    };
    let mut m = config.model.clone();
    m.family = args.family.unwrap_or(m.family);
    for (slot, value) in [
        (&mut m.p, args.p),
        (&mut m.depth, args.depth),
        (&mut m.width, args.width),
        (&mut m.hd, args.hd),
        (&mut m.hw, args.hw),
        (&mut m.gd, args.gd),
        (&mut m.gw, args.gw),
    ] {
        if let Some(v) = value {
            *slot = v;
        }
    }
    let spec = RunConfig { model: m, ..config }.model_spec(d);
    spec.validate()?;
    println!("{}", commands::count_line(&spec));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let config = resolve(&cli)?;
    match &cli.command {
        Command::CountParams(args) => count_params(config, args),
        Command::Fit => commands::train_runs(config, true),
        Command::Solve => commands::train_runs(config, false),
        Command::Rates => commands::rates(config),
        Command::Spectrum(args) => commands::spectrum_cmd(config, &args.checkpoint),
        Command::Slice(args) => commands::slice_cmd(config, &args.checkpoint),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.downcast_ref::<commands::Aborted>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
