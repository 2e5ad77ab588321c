//! `selconf` — generate synthetic scored datasets, train selection heads,
//! and evaluate selective-prediction metrics.
//!
//! Exit codes: 0 success, 2 validation/input error, 3 infeasible threshold,
//! 4 numeric failure.

mod commands;
mod manifest;
mod methods;
mod percent;

use clap::{Parser, Subcommand};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "selconf", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scored dataset plus its true-posterior side file.
    Synth(commands::synth::SynthArgs),
    /// Evaluate selection methods on a record file (one metrics row each).
    Eval(commands::eval::EvalArgs),
    /// Emit the full risk-coverage curve of one method as CSV.
    Sweep(commands::sweep::SweepArgs),
    /// Fit vector-scaling calibration parameters on a record file.
    CalibrateVs(commands::calibrate::CalibrateArgs),
    /// Train the fusion heads on a training/validation split pair.
    TrainHeads(commands::train::TrainArgs),
    /// Numeric verification report: error moments, fusion condition, best
    /// fixed weight, separation statistics.
    Verify(commands::verify::VerifyArgs),
    /// Select thresholds on a validation file and measure how they carry to
    /// a test file.
    Thresholds(commands::thresholds::ThresholdsArgs),
    /// End-to-end multi-seed run: synth -> split -> train -> eval -> aggregate.
    Pipeline(commands::pipeline::PipelineArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => commands::synth::run(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::Sweep(args) => commands::sweep::run(args),
        Command::CalibrateVs(args) => commands::calibrate::run(args),
        Command::TrainHeads(args) => commands::train::run(args),
        Command::Verify(args) => commands::verify::run(args),
        Command::Thresholds(args) => commands::thresholds::run(args),
        Command::Pipeline(args) => commands::pipeline::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &selconf::Error) -> u8 {
    match err {
        selconf::Error::Infeasible(_) => 3,
        selconf::Error::Numeric(_) => 4,
        _ => 2,
    }
}
