//! `dualcp`: build prototypes, train per-domain calibrators and evaluate
//! them on frozen embedding files.

mod args;
mod run;

use std::process::ExitCode;

use clap::Parser;

use crate::args::{Cli, Command};
use crate::run::Failure;

fn threads_from_env() -> Result<Option<usize>, Failure> {
    match std::env::var("DUALCP_THREADS") {
        Err(_) => Ok(None),
        Ok(v) if v.trim().is_empty() => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Failure::Usage(format!(
                "DUALCP_THREADS must be a positive integer, got {v:?}"
            ))),
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = threads_from_env().and_then(|threads| {
        dualcp::harness::with_threads(threads, move || match cli.command {
            Command::Synth(a) => run::synth(&a),
            Command::Prototypes(a) => run::prototypes(&a),
            Command::Train(a) => run::train(&a),
            Command::Eval(a) => run::eval(&a),
            Command::Verify(a) => run::verify(&a),
        })
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
