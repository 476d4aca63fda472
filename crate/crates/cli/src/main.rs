mod args;
mod commands;
mod output;

use std::path::Path;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use thiserror::Error;

use args::{Cli, Command};
use commands::Outcome;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("writing output: {0}")]
    Output(String),
    #[error("{0}")]
    Solver(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Solver(_) => 2,
            _ => 1,
        }
    }
}

fn run(cli: &Cli) -> Result<Outcome, CliError> {
    if let Command::Fit(a) = &cli.command {
        return commands::fit(a);
    }
    let p = commands::load_params(cli.params.as_deref())?;
    match &cli.command {
        Command::Solve(a) => commands::solve(&p, a),
        Command::Steady(a) => commands::steady(&p, a),
        Command::Sweep(a) => commands::sweep(&p, a),
        Command::Contour(a) => commands::contour(&p, a),
        Command::Dns(a) => commands::dns(&p, a),
        Command::Arrow(a) => commands::arrow(&p, a),
        Command::Fit(_) => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(&cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Flagged(msg)) => {
            eprintln!("warning: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
