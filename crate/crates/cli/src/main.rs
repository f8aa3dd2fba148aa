mod args;
mod commands;
mod data;
mod manifest;
mod settings;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, FromArgMatches};

use args::{Cli, Command};
use settings::Settings;

/// Bad flags, missing required values, or conflicting options.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_TRAINING: u8 = 3;

fn exit_code(e: &anyhow::Error) -> u8 {
    use puda_core::Error as E;
    for cause in e.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if let Some(err) = cause.downcast_ref::<E>() {
            return match err {
                E::InvalidArgument(_) => EXIT_USAGE,
                E::Degenerate(_) | E::NonFinite(_) | E::Diverged { .. } => EXIT_TRAINING,
                _ => EXIT_DATA,
            };
        }
    }
    EXIT_DATA
}

fn run(matches: clap::ArgMatches) -> anyhow::Result<()> {
    let cli = Cli::from_arg_matches(&matches).map_err(|e| UsageError(e.to_string()))?;
    match &cli.command {
        Command::Replay(r) => commands::replay(&r.manifest, r.out.as_deref()),
        _ => {
            let (name, sub) = matches.subcommand().expect("subcommand is required");
            let settings = Settings::from_matches(name, sub)?;
            commands::dispatch(&settings)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let matches = match Cli::command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match run(matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
