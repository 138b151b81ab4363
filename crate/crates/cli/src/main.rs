//! Command-line entry point. Exit codes mirror the error classes: 2 for
//! configuration problems, 3 for data/parsing, 4 for dimension or numeric
//! failures, 5 for training failures, 1 otherwise.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use prunegcrn::error::Error;

#[derive(Parser)]
#[command(
    name = "prunegcrn",
    about = "Spatio-temporal forecasting with a node mask learned during training",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Experiment configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the experiment's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Override the worker-pool size for multi-run experiments.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train across seeds; writes checkpoints, mask CSVs, and a report.
    Train(commands::train::Args),
    /// Score a checkpoint on a dataset's test split.
    Evaluate(commands::evaluate::Args),
    /// Cross-product of pruning methods and fractions, reported as a grid.
    ComparePruning(commands::compare::Args),
    /// Inference time and resource counts of the compact model per fraction.
    Benchmark(commands::benchmark::Args),
    /// Node-usage frequency, spatial autocorrelation, and map emission.
    Analyze(commands::analyze::Args),
    /// Generate the synthetic driver/follower dataset files.
    GenSynthetic(commands::gen::Args),
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Parse { .. } => 3,
        Error::Dimension { .. } | Error::Numeric { .. } | Error::Domain(_) => 4,
        Error::Training { .. } => 5,
        Error::Io(_) | Error::Json(_) => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => commands::train::run(args),
        Command::Evaluate(args) => commands::evaluate::run(args),
        Command::ComparePruning(args) => commands::compare::run(args),
        Command::Benchmark(args) => commands::benchmark::run(args),
        Command::Analyze(args) => commands::analyze::run(args),
        Command::GenSynthetic(args) => commands::gen::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
