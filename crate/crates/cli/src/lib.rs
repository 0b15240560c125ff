//! The `blinkwatch` command line: one subcommand per pipeline stage plus the
//! HTTP service behind the candidate review UI.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage error. Every run ends by
//! writing a one-line JSON run log to stderr (and to `--run-log` if given).

pub mod commands;
pub mod review;
pub mod runlog;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use commands::{
    AttentionArgs, BuildDatasetArgs, CalibrateArgs, EvaluateArgs, ExtractArgs, ServeArgs,
    SynthArgs, TrainArgs,
};
use runlog::RunLog;

#[derive(Debug, Parser)]
#[command(
    name = "blinkwatch",
    version,
    about = "Blink detection and attention analysis tools"
)]
pub struct Cli {
    /// Also write the JSON run log to this file.
    #[arg(long, global = true, value_name = "PATH")]
    pub run_log: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Find blink candidates in session EEG traces.
    ExtractCandidates(ExtractArgs),
    /// Window reviewed candidates and sampled negatives into a dataset.
    BuildDataset(BuildDatasetArgs),
    /// Train the blink classifier.
    Train(TrainArgs),
    /// Pick the equal-error-rate threshold on a calibration split.
    Calibrate(CalibrateArgs),
    /// Score a 13-frame benchmark and report per-eye metrics.
    Evaluate(EvaluateArgs),
    /// Relate detected blink rate to EEG attention.
    AttentionReport(AttentionArgs),
    /// Generate synthetic sessions, eye crops or benchmarks.
    Synth(SynthArgs),
    /// Serve the candidate review API.
    ServeReview(ServeArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::ExtractCandidates(_) => "extract-candidates",
            Self::BuildDataset(_) => "build-dataset",
            Self::Train(_) => "train",
            Self::Calibrate(_) => "calibrate",
            Self::Evaluate(_) => "evaluate",
            Self::AttentionReport(_) => "attention-report",
            Self::Synth(_) => "synth",
            Self::ServeReview(_) => "serve-review",
        }
    }

    fn config(&self) -> serde_json::Value {
        let v = match self {
            Self::ExtractCandidates(a) => serde_json::to_value(a),
            Self::BuildDataset(a) => serde_json::to_value(a),
            Self::Train(a) => serde_json::to_value(a),
            Self::Calibrate(a) => serde_json::to_value(a),
            Self::Evaluate(a) => serde_json::to_value(a),
            Self::AttentionReport(a) => serde_json::to_value(a),
            Self::Synth(a) => serde_json::to_value(a),
            Self::ServeReview(a) => serde_json::to_value(a),
        };
        v.unwrap_or(serde_json::Value::Null)
    }
}

/// A problem with how the tool was invoked rather than with the data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Parses `argv`, runs the subcommand and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let mut log = RunLog::start(cli.command.name(), cli.command.config());
    let result = commands::dispatch(&cli.command, &mut log);
    let code = match &result {
        Ok(()) => EXIT_OK,
        Err(e) if e.downcast_ref::<UsageError>().is_some() => EXIT_USAGE,
        Err(_) => EXIT_DOMAIN,
    };
    if let Err(e) = &result {
        eprintln!("error: {e:#}");
    }
    log.finish(code, result.as_ref().err().map(|e| format!("{e:#}")));
    let line = log.to_line();
    eprintln!("{line}");
    if let Some(path) = &cli.run_log {
        if let Err(e) = std::fs::write(path, format!("{line}\n")) {
            eprintln!("error: cannot write run log {}: {e}", path.display());
        }
    }
    code
}
