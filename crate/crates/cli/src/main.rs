//! `ldpo`: train, evaluate and schedule lambda-weighted listwise DPO runs.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data or I/O error,
//! 3 training diverged.

use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod eval;
mod failure;
mod io;
mod manifest;
mod opts;
mod report;
mod sched;
mod svg;
mod train;

#[derive(Debug, Parser)]
#[command(name = "ldpo", version, about = "Lambda-weighted listwise DPO at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a toy policy on a JSONL dataset.
    Train(train::TrainArgs),
    /// Evaluate a checkpoint at one λ, at every vertex, or over a grid.
    Eval(eval::EvalArgs),
    /// Fit the polynomial performance model to (λ, score) observations.
    FitScheduler(sched::FitArgs),
    /// Tabulate candidate λ, predicted scores and sampling probabilities.
    SampleLambda(sched::SampleArgs),
    /// Plot a loss CSV as SVG.
    Report(report::ReportArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { failure::EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train(a) => train::run(a),
        Command::Eval(a) => eval::run(a),
        Command::FitScheduler(a) => sched::fit(a),
        Command::SampleLambda(a) => sched::sample(a),
        Command::Report(a) => report::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
