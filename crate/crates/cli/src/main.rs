//! scrawl: train, sample, parse, and evaluate the stroke-based drawing
//! agent. Exit codes: 0 success, 1 usage error, 2 runtime failure.

mod commands;
mod config;
mod imgio;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "scrawl",
    version,
    about = "Stroke-based drawing agent: REINFORCE-trained character generation and parsing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy (generation with a discriminator, or parsing).
    Train(commands::train::TrainArgs),
    /// Sample from trained checkpoints (unconditional, exemplar, type).
    Generate(commands::generate::GenerateArgs),
    /// Parse raster glyphs into stroke programs.
    Parse(commands::parse_cmd::ParseArgs),
    /// Metric suites over checkpoints and outputs.
    Eval(commands::eval::EvalArgs),
    /// Dataset pixel statistics and the cluster-center grid.
    Stats(commands::stats::StatsArgs),
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                std::process::exit(0);
            }
            let _ = e.print();
            std::process::exit(1);
        }
    };
    let result = match cli.command {
        Command::Train(args) => commands::train::run(args),
        Command::Generate(args) => commands::generate::run(args),
        Command::Parse(args) => commands::parse_cmd::run(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::Stats(args) => commands::stats::run(args),
    };
    match result {
        Ok(()) => {}
        Err(message) => {
            eprintln!("error: {message}");
            std::process::exit(2);
        }
    }
}
