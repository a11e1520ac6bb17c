//! `muvf`: corpus generation, training, evaluation, inference and checkpoint
//! inspection for the multi-user speaker filter.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{EvalArgs, FeaturesArgs, GenCorpusArgs, InferArgs, InspectArgs, TrainArgs};

#[derive(Parser, Debug)]
#[command(name = "muvf", version, about = "Multi-user speaker-conditioned filter on log-mel features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train on the seeded synthetic corpus.
    Train(TrainArgs),
    /// Write the condition × enrolled-users report for a checkpoint.
    Eval(EvalArgs),
    /// Stream a WAV file or feature dump through a checkpoint.
    Infer(InferArgs),
    /// Print the topology, tensors and parameter count of a checkpoint.
    Inspect(InspectArgs),
    /// Extract stacked log-mel features from a WAV file.
    Features(FeaturesArgs),
    /// Write a corpus manifest and, optionally, the examples themselves.
    GenCorpus(GenCorpusArgs),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use muvf_core::error::{Error, NumericError};
    for cause in err.chain() {
        if cause.downcast_ref::<NumericError>().is_some() || matches!(cause.downcast_ref::<Error>(), Some(Error::Numeric(_))) {
            return 3;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Infer(a) => commands::infer(a),
        Command::Inspect(a) => commands::inspect(a),
        Command::Features(a) => commands::features(a),
        Command::GenCorpus(a) => commands::gen_corpus(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
