//! CLI-level errors with stable process exit codes.

use std::fmt;

/// Exit codes: 0 success, 2 config error, 3 data/shape error, 4 I/O error.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration file or command-line usage.
    Config(String),
    /// Malformed or incompatible checkpoint contents.
    Format(String),
    /// Numeric-core failures (shapes, ranges, validation).
    Core(mergeq_core::Error),
    Io(std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Format(_) | CliError::Core(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Format(msg) => write!(f, "checkpoint error: {msg}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<mergeq_core::Error> for CliError {
    fn from(e: mergeq_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
