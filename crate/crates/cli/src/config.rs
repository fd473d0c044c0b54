//! Command-line and configuration-file options.
//!
//! Flags override the optional TOML file given by `--config`; the
//! environment only ever supplies credentials.

use std::net::IpAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "panelguide", version, about = "Turn maintenance instructions into guided panel sessions")]
pub struct Cli {
    /// TOML file with defaults for any of the flags below.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Panel schema JSON (defaults to the built-in panel).
    #[arg(long, global = true, value_name = "FILE")]
    pub schema: Option<PathBuf>,
    /// Directory for session logs, reports and CSV output.
    #[arg(long, global = true, value_name = "DIR")]
    pub log_dir: Option<PathBuf>,
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compile one instruction document into a command sequence.
    Compile(CompileArgs),
    /// Host sessions over TCP and WebSocket.
    Serve(ServeArgs),
    /// Run simulated operators through a paired experiment.
    Simulate(SimulateArgs),
    /// Score session logs or test paired samples.
    Analyze {
        #[command(subcommand)]
        command: AnalyzeCommand,
    },
    /// Validate a panel schema and print its item census.
    SchemaCheck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendChoice {
    Live,
    Scripted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeChoice {
    Strict,
    Lenient,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long, value_enum)]
    pub backend: Option<BackendChoice>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeChoice>,
    /// Fixture directory with instructions/, replies/ and ocr/ (defaults to
    /// the bundled HVAC and pump fixtures).
    #[arg(long, value_name = "DIR")]
    pub fixtures: Option<PathBuf>,
    /// Directory with context.txt and reinforcement.txt prompt templates.
    #[arg(long, value_name = "DIR")]
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompileArgs {
    /// Instruction text file, or an image to run through OCR.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Where to write the parse report (default `<log-dir>/<doc-id>.report.json`).
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Listen address; anything but loopback exposes the rig to the network.
    #[arg(long)]
    pub host: Option<IpAddr>,
    /// TCP port; the WebSocket bridge listens one above.
    #[arg(long)]
    pub port: Option<u16>,
    /// Reject OCR results shorter than this many words.
    #[arg(long)]
    pub min_ocr_words: Option<usize>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Operator profile JSON; give two for distinct conditions.
    #[arg(long, value_name = "FILE", required = true, num_args = 1)]
    pub profile: Vec<PathBuf>,
    /// Fixture id per condition.
    #[arg(long, num_args = 1, default_values = ["hvac", "pump"])]
    pub fixture: Vec<String>,
    /// Condition labels (default: profile file stems).
    #[arg(long, num_args = 1)]
    pub label: Vec<String>,
    /// Number of simulated subjects.
    #[arg(long, default_value_t = 15)]
    pub n: usize,
    /// Seed of the first subject; subject i uses seed + i.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Sleep through think times instead of advancing a virtual clock.
    #[arg(long)]
    pub real_time: bool,
    /// Run subjects one after another.
    #[arg(long)]
    pub sequential: bool,
    /// Drive an already running server instead of an in-process one; its
    /// log directory must be `--log-dir`.
    #[arg(long, value_name = "ADDR")]
    pub connect: Option<std::net::SocketAddr>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Score session logs; prints one JSON report per log.
    Score(ScoreArgs),
    /// Wilcoxon signed-rank test on a `subject,<a>,<b>` CSV.
    Wilcoxon(WilcoxonArgs),
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long = "log", value_name = "FILE", required = true, num_args = 1)]
    pub logs: Vec<PathBuf>,
    /// Score against this fixture's canonical reply.
    #[arg(long, conflicts_with = "correct", required_unless_present = "correct")]
    pub fixture: Option<String>,
    /// Score against an explicit sequence such as "B_04, K_03".
    #[arg(long)]
    pub correct: Option<String>,
    #[arg(long, value_name = "DIR")]
    pub fixtures: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Auto,
    Exact,
    Normal,
}

#[derive(Debug, Args)]
pub struct WilcoxonArgs {
    #[arg(long, value_name = "FILE")]
    pub csv: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodArg::Auto)]
    pub method: MethodArg,
}

/// Keys accepted in the `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub schema: Option<PathBuf>,
    pub log_dir: Option<PathBuf>,
    pub verbose: Option<bool>,
    pub backend: Option<BackendChoice>,
    pub mode: Option<ModeChoice>,
    pub fixtures: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub host: Option<IpAddr>,
    pub port: Option<u16>,
    pub min_ocr_words: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))
    }
}

/// Flags merged over the config file over built-in defaults.
#[derive(Debug, Clone)]
pub struct Settings {
    pub schema: Option<PathBuf>,
    pub log_dir: PathBuf,
    pub verbose: bool,
    pub backend: BackendChoice,
    pub mode: ModeChoice,
    pub fixtures: Option<PathBuf>,
    pub templates: Option<PathBuf>,
}

impl Settings {
    pub fn resolve(cli: &Cli, file: &FileConfig, pipeline: Option<&PipelineArgs>) -> Self {
        Settings {
            schema: cli.schema.clone().or_else(|| file.schema.clone()),
            log_dir: cli
                .log_dir
                .clone()
                .or_else(|| file.log_dir.clone())
                .unwrap_or_else(|| PathBuf::from("logs")),
            verbose: cli.verbose || file.verbose.unwrap_or(false),
            backend: pipeline
                .and_then(|p| p.backend)
                .or(file.backend)
                .unwrap_or(BackendChoice::Scripted),
            mode: pipeline
                .and_then(|p| p.mode)
                .or(file.mode)
                .unwrap_or(ModeChoice::Strict),
            fixtures: pipeline
                .and_then(|p| p.fixtures.clone())
                .or_else(|| file.fixtures.clone()),
            templates: pipeline
                .and_then(|p| p.templates.clone())
                .or_else(|| file.templates.clone()),
        }
    }
}
