mod args;
mod commands;
mod manifest;

use std::process::ExitCode;

use clap::Parser;

use crate::args::{Cli, Command, ExperimentCommand};

/// Why a command stopped, mapped to the process exit status.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Data(_) => 3,
            Failure::Numeric(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numeric(m) => m,
        }
    }
}

/// Wraps a library error with the stage that produced it.
pub fn at(stage: &'static str) -> impl Fn(blockshap::Error) -> Failure {
    move |e| {
        let msg = format!("{stage}: {e}");
        if e.is_numeric() {
            Failure::Numeric(msg)
        } else {
            Failure::Data(msg)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads(cli.threads).and_then(|()| match &cli.command {
        Command::Estimate(a) => commands::estimate(a),
        Command::Shapley(a) => commands::shapley(a),
        Command::Generate(a) => commands::generate(a),
        Command::Experiment(ExperimentCommand::Crb(a)) => commands::crb(a),
        Command::Experiment(cmd) => commands::experiment(cmd),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let kind = if let Failure::Usage(_) = f { "usage error" } else { "error" };
            eprintln!("{kind}: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn configure_threads(threads: Option<usize>) -> Result<(), Failure> {
    match threads {
        None => Ok(()),
        Some(0) => Err(Failure::Usage("--threads must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("cannot configure {n} threads: {e}"))),
    }
}
