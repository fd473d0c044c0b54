//! `panelguide`: exit status 0 on success, 1 on usage errors and 2 when a
//! pipeline stage or domain check fails.

mod commands;
mod config;

use std::fmt;
use std::process::ExitCode;

use clap::Parser;
use clap::error::ErrorKind;

use config::{Cli, Command, FileConfig, Settings};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    /// A failed pipeline stage or domain check, tagged with its stage.
    Stage { stage: &'static str, message: String },
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError::Usage(message.into())
    }

    pub fn stage(stage: &'static str, message: impl fmt::Display) -> Self {
        CliError::Stage {
            stage,
            message: message.to_string(),
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Stage { .. } => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Stage { stage, message } => write!(f, "{stage}: {message}"),
        }
    }
}

fn init_logging(verbose: bool) {
    let default = if verbose { "debug" } else { "warn" };
    let filter = tracing_subscriber::EnvFilter::try_from_env("PANELGUIDE_LOG")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let pipeline = match &cli.command {
        Command::Compile(a) => Some(&a.pipeline),
        Command::Serve(a) => Some(&a.pipeline),
        Command::Simulate(a) => Some(&a.pipeline),
        _ => None,
    };
    let settings = Settings::resolve(&cli, &file, pipeline);
    init_logging(settings.verbose);

    match &cli.command {
        Command::Compile(args) => commands::compile(&settings, args),
        Command::Serve(args) => commands::serve(&settings, &file, args),
        Command::Simulate(args) => commands::simulate(&settings, args),
        Command::Analyze { command } => commands::analyze(&settings, command),
        Command::SchemaCheck => commands::schema_check(&settings),
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
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
