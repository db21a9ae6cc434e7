mod args;
mod commands;
mod config;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, FromArgMatches};

use crate::args::Cli;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    /// A well-formed request the model rejects (invalid graph, failed fit).
    #[error("{0}")]
    Model(String),
    #[error(transparent)]
    Core(#[from] treetilt::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use treetilt::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Model(_) => 2,
            CliError::Core(e) => match e {
                E::Data { .. } | E::Csv(_) | E::Config(_) | E::Io(_) | E::Json(_) => 1,
                _ => 2,
            },
        }
    }
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse() -> Result<Cli, ExitCode> {
    let argv: Vec<String> = std::env::args().collect();
    let clap_exit = |e: clap::Error| {
        let _ = e.print();
        match e.kind() {
            ErrorKind::DisplayHelp
            | ErrorKind::DisplayVersion
            | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => ExitCode::SUCCESS,
            _ => ExitCode::from(1),
        }
    };
    let matches = Cli::command().try_get_matches_from(&argv).map_err(clap_exit)?;
    let argv = match config::merge_config_file(&matches, argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return Err(ExitCode::from(1));
        }
    };
    let matches = Cli::command().try_get_matches_from(&argv).map_err(clap_exit)?;
    Cli::from_arg_matches(&matches).map_err(clap_exit)
}

fn main() -> ExitCode {
    let cli = match parse() {
        Ok(c) => c,
        Err(code) => return code,
    };
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = treetilt::par::set_workers(n) {
            eprintln!("warning: {e}");
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
