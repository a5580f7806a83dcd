mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::Context;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "calidesign", version, about = "Model-robust designs for computer-model calibration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Build a design and write design.csv plus a run report.
    Design(Common),
    /// Two-step calibration of observed data.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Observations with columns x1..xp, y; overrides `calibrate.data`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// RMSPE comparison of the proposed design against baselines.
    Study(Common),
    /// Fit the GP emulator to the configured training runs.
    SurrogateFit(Common),
}

fn context(common: &Common) -> CliResult<Context> {
    let config = RunConfig::load(&common.config, common.seed)?;
    let out = common
        .out
        .clone()
        .or_else(|| config.out.clone())
        .ok_or_else(|| CliError::config("out", "an output directory (config `out` or --out)", "nothing"))?;
    std::fs::create_dir_all(&out).map_err(|e| CliError::Io {
        path: out.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(Context {
        config,
        out,
        verbose: common.verbose,
    })
}

fn run(cli: Cli) -> CliResult<()> {
    let (common, data) = match &cli.command {
        Command::Design(c) | Command::Study(c) | Command::SurrogateFit(c) => (c, None),
        Command::Calibrate { common, data } => (common, data.as_deref()),
    };
    let ctx = context(common)?;
    let go = || match &cli.command {
        Command::Design(_) => commands::design(&ctx),
        Command::Calibrate { .. } => commands::calibrate(&ctx, data),
        Command::Study(_) => commands::study(&ctx),
        Command::SurrogateFit(_) => commands::surrogate_fit(&ctx),
    };
    match common.jobs {
        Some(n) => calidesign::par::with_threads(n, go),
        None => go(),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
