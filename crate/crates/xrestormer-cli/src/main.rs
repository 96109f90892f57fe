//! Command-line workbench for the restoration network: synthesize degraded
//! datasets, train, evaluate checkpoints, audit parameter counts, and render
//! benchmark reports.
//!
//! Exit codes: 0 on success, 1 for command-line usage errors, 2 for data
//! errors (missing or malformed files, bad configs), 3 for numeric failures
//! (non-finite losses, diverged runs).

use clap::{Parser, Subcommand};
use std::process::ExitCode;

use xrestormer::Error;
use xrestormer_cli::commands;

#[derive(Parser)]
#[command(name = "xrestormer", version, about = "Image restoration workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Degrade a directory of clean PNGs into a benchmark dataset.
    Degrade(commands::degrade::DegradeArgs),
    /// Train a model on the clean images of a dataset manifest.
    Train(commands::train::TrainArgs),
    /// Evaluate a checkpoint against a dataset manifest.
    Eval(commands::eval::EvalArgs),
    /// Cross-check the closed-form parameter count against enumeration.
    ParamAudit(commands::audit::ParamAuditArgs),
    /// Merge evaluation reports and render a markdown table.
    Report(commands::report::ReportArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests arrive here too; clap routes them
            // to stdout and they exit clean, unlike genuine usage errors.
            let is_usage = e.use_stderr();
            let _ = e.print();
            return if is_usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };

    let result = match cli.command {
        Command::Degrade(args) => commands::degrade::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::ParamAudit(args) => commands::audit::run(args),
        Command::Report(args) => commands::report::run(args),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Numeric(_) => 3,
                _ => 2,
            })
        }
    }
}
