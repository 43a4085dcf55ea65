//! Command-line front end for the self-supervised recommender engine.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "selfcf",
    version,
    about = "Train and evaluate self-supervised collaborative filtering models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
pub struct CommonArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides train.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Dotted-path config override, e.g. --set train.l2=1e-5. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Overrides output.dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a raw interaction log, filter, split, and write the canonical
    /// dataset files.
    Prepare(CommonArgs),
    /// Train on the prepared dataset and evaluate the best checkpoint on the
    /// test partition.
    Train(CommonArgs),
    /// Evaluate an existing checkpoint on the test partition.
    Evaluate(CommonArgs),
    /// Train once per value of one config field and tabulate the metrics.
    Sweep(CommonArgs),
    /// Run the fixed grid of head/loss/stop-gradient variants.
    Ablate(CommonArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Prepare(args) => commands::prepare(args),
        Command::Train(args) => commands::train(args),
        Command::Evaluate(args) => commands::evaluate_cmd(args),
        Command::Sweep(args) => commands::sweep(args),
        Command::Ablate(args) => commands::ablate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
