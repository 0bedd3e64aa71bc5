//! Command-line front end.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 usage error, 3 numerical
//! failure. `RIDNET_THREADS` caps internal parallelism.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ridnet_core::error::Error;

#[derive(Parser)]
#[command(
    name = "ridnet",
    about = "Graph-based low-dose CT denoising: data synthesis, training, inference, evaluation and audits",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate paired clean/low-dose synthetic CT volumes.
    GenData(commands::gen_data::Args),
    /// Train a denoiser on a directory of volume pairs.
    Train(commands::train::Args),
    /// Denoise a volume with a trained checkpoint.
    Denoise(commands::denoise::Args),
    /// Score denoised volumes against their clean references.
    Eval(commands::eval::Args),
    /// Run the finite-difference gradient audits.
    Gradcheck(commands::gradcheck::Args),
    /// Train one model per hyperparameter value and tabulate metrics.
    Sweep(commands::sweep_cmd::Args),
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Io(_) | Error::Serde(_) | Error::CorruptFile(_) => 1,
        Error::InvalidArgument(_) | Error::ShapeMismatch(_) => 2,
        Error::NonFinite(_) | Error::GradCheck(_) | Error::TrainingAborted { .. } => 3,
    }
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("RIDNET_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n > 0 => {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .ok();
            }
            _ => {
                eprintln!("error: RIDNET_THREADS must be a positive integer, got {threads:?}");
                return ExitCode::from(2);
            }
        }
    }
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(args) => commands::gen_data::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Denoise(args) => commands::denoise::run(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::Gradcheck(args) => commands::gradcheck::run(args),
        Command::Sweep(args) => commands::sweep_cmd::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
