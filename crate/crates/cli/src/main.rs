//! `aecns`: batch front end for enhancement, scene simulation and metrics.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Failure;

#[derive(Parser, Debug)]
#[command(
    name = "aecns",
    version,
    about = "Streaming echo cancellation and noise suppression"
)]
struct Cli {
    /// Log verbosity (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Enhance a microphone recording given the far-end reference.
    Enhance(EnhanceArgs),
    /// Generate seeded synthetic scenes with ground truth.
    Simulate(SimulateArgs),
    /// Score an enhanced file against a scene directory.
    Metrics(MetricsArgs),
}

#[derive(Args, Debug)]
pub struct EnhanceArgs {
    /// Microphone signal (mono 16 kHz WAV).
    #[arg(long)]
    pub near: PathBuf,
    /// Far-end reference (mono 16 kHz WAV).
    #[arg(long)]
    pub far: PathBuf,
    /// Output WAV; overrides the config's output path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Network weight file; without one the network stage is skipped.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub no_network: bool,
    #[arg(long)]
    pub no_filter: bool,
    #[arg(long)]
    pub no_delay: bool,
    /// TOML session config.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// TOML scene spec.
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Base seed; scene `i` uses `seed + i`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct MetricsArgs {
    /// Directory written by `simulate` (or any directory with a manifest).
    #[arg(long)]
    pub scene_dir: PathBuf,
    #[arg(long)]
    pub enhanced: PathBuf,
    /// Report destination; `-` writes to stdout.
    #[arg(long)]
    pub json: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { Failure::USAGE } else { 0 });
        }
    };
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .init();

    let outcome = std::panic::catch_unwind(|| match cli.command {
        Command::Enhance(args) => commands::enhance(&args),
        Command::Simulate(args) => commands::simulate(&args),
        Command::Metrics(args) => commands::metrics(&args),
    });
    match outcome {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(failure)) => {
            eprintln!("aecns: {}", failure.message);
            ExitCode::from(failure.code)
        }
        Err(_) => ExitCode::from(Failure::INTERNAL),
    }
}
