//! The `arcs` command-line tool.
//!
//! Exit codes: 0 success, 2 degenerate geometry, 64 usage error, 65 malformed
//! input file, 70 internal error, 74 I/O error.

pub mod commands;
pub mod io;

use std::fmt;
use std::path::Path;

pub use commands::{run, Cli};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Parse { path: String, line: usize, msg: String },
    Unsupported(String),
    Io { path: String, source: std::io::Error },
    Degenerate(String),
    Internal(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.display().to_string(), source }
    }

    pub fn parse(path: &Path, line: usize, msg: &str) -> Self {
        Self::Parse { path: path.display().to_string(), line, msg: msg.to_string() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Degenerate(_) => 2,
            Self::Usage(_) => 64,
            Self::Parse { .. } | Self::Unsupported(_) => 65,
            Self::Internal(_) => 70,
            Self::Io { .. } => 74,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "usage error: {m}"),
            Self::Parse { path, line, msg } => write!(f, "{path}:{line}: {msg}"),
            Self::Unsupported(m) => write!(f, "unsupported format: {m}"),
            Self::Io { path, source } => write!(f, "{path}: {source}"),
            Self::Degenerate(m) => write!(f, "degenerate configuration: {m}"),
            Self::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<arcs::Error> for CliError {
    fn from(e: arcs::Error) -> Self {
        match e {
            arcs::Error::InvalidArgument(m) => Self::Usage(m),
            arcs::Error::Degenerate(m) => Self::Degenerate(m),
            arcs::Error::Internal(m) => Self::Internal(m),
        }
    }
}
