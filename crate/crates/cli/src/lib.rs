//! Batch front-end for the `redense` library.
//!
//! Every subcommand prints `key=value` lines on stdout, writes its files
//! plus a `<subcommand>.manifest.json` into `--out-dir`, and exits with one of the codes
//! below. [`run`] is the whole program minus process setup, so tests can
//! drive it in-process.

use std::ffi::OsString;
use std::io::Write;

use clap::Parser;

mod args;
mod commands;
mod load;
mod manifest;

pub use args::{Cli, Command, DataArgs, EvalArgs, FeaturesArgs, HeadArgs, RedenseArgs, SweepArgs, TrainArgs};
pub use commands::{
    bundle_from_model, parse_width, BUNDLE_TEST, BUNDLE_TRAIN, BUNDLE_VALIDATION, HEAD_FILE, MODEL_FILE, REDENSE_CURVE,
    REDENSE_MODEL, SWEEP_FILE, TRAIN_CURVE,
};
pub use manifest::{manifest_path, sha256_hex, RunManifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;
pub const EXIT_GUARANTEE: i32 = 5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Diverged(String),
    #[error("{0}")]
    Guarantee(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Diverged(_) => EXIT_DIVERGED,
            CliError::Guarantee(_) => EXIT_GUARANTEE,
        }
    }
}

impl From<redense::Error> for CliError {
    fn from(e: redense::Error) -> Self {
        use redense::Error as E;
        match e {
            E::InvalidConfig(_) | E::WidthConstraint { .. } => CliError::Usage(e.to_string()),
            E::Diverged { .. } => CliError::Diverged(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

/// Ordered `key=value` lines destined for stdout.
#[derive(Debug, Default)]
pub struct Output {
    lines: Vec<(String, String)>,
}

impl Output {
    pub fn put(&mut self, key: impl Into<String>, value: impl ToString) {
        self.lines.push((key.into(), value.to_string()));
    }

    pub fn lines(&self) -> &[(String, String)] {
        &self.lines
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.lines.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

/// Parses `argv` (including the program name), runs the subcommand, and
/// returns the process exit code. Stdout lines go to `out`; diagnostics go
/// to stderr.
pub fn run<I, T>(argv: I, out: &mut impl Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let argv: Vec<String> = argv.iter().map(|s| s.to_string_lossy().into_owned()).collect();
    let mut output = Output::default();
    let result = commands::dispatch(&cli.command, argv, &mut output);
    for (k, v) in output.lines() {
        let _ = writeln!(out, "{k}={v}");
    }
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
