//! Command-line front end: presets, config files, CSV/SVG output and the
//! `homlab` subcommands.

pub mod commands;
pub mod config;
pub mod output;
pub mod presets;

use std::fmt;
use std::io::Write;
use std::path::PathBuf;

pub use commands::{run, run_command};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Core(homlab_core::Error),
    Io {
        path: PathBuf,
        message: String,
    },
    /// Command-line syntax; already formatted by the argument parser.
    Args(String),
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.code(),
            CliError::Io { .. } => "io",
            CliError::Args(_) => "usage",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if !e.is_validation() => EXIT_NUMERICAL,
            _ => EXIT_VALIDATION,
        }
    }

    /// One line for standard error: `error: code=<code>: <message>`.
    pub fn report(&self, err: &mut dyn Write) {
        let _ = writeln!(err, "error: code={}: {self}", self.code());
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io { path, message } => write!(f, "{}: {message}", path.display()),
            CliError::Args(m) => f.write_str(m.trim_end()),
        }
    }
}

impl std::error::Error for CliError {}

impl From<homlab_core::Error> for CliError {
    fn from(e: homlab_core::Error) -> Self {
        CliError::Core(e)
    }
}
