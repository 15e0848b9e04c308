mod args;
mod commands;
mod manifest;

use std::process::ExitCode;

use clap::Parser;
use mlcoda::{CodaError, ErrorCategory};

use args::{Cli, Command};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(CodaError),
    /// Diagnostics thresholds were breached; the report has been printed.
    Breach,
}

impl From<CodaError> for CliError {
    fn from(e: CodaError) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e.category() {
                ErrorCategory::Usage => 2,
                ErrorCategory::Data => 3,
                ErrorCategory::Sampling => 4,
            },
            CliError::Breach => 5,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Transform(a) => commands::transform(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Substitute(a) => commands::substitute(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Diagnose(a) => commands::diagnose(&a),
    }
}

fn main() -> ExitCode {
    let argv = match args::expand_config(std::env::args().collect()) {
        Ok(v) => v,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Breach) => ExitCode::from(5),
        Err(e) => {
            match &e {
                CliError::Usage(msg) => eprintln!("error: {msg}"),
                CliError::Core(err) => eprintln!("error: {err}"),
                CliError::Breach => {}
            }
            ExitCode::from(e.exit_code())
        }
    }
}
