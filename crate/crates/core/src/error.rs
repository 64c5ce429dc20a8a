//! Error taxonomy shared by every module, with a stable mapping to process
//! exit codes for the command-line front end.

use std::path::PathBuf;
use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, MwError>;

/// All failure modes surfaced by the library.
///
/// The variants are grouped by who is at fault: `Dimension`/`Data`/`Io`
/// indicate bad inputs, `Config`/`Usage` indicate a bad invocation, and
/// `Training` indicates numerical divergence at runtime.
#[derive(Debug, Error)]
pub enum MwError {
    /// Two operands (or an operand and a parameter) have incompatible shapes.
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: String, detail: String },

    /// Malformed or inconsistent input data (files, labels, degenerate sets).
    #[error("data error: {0}")]
    Data(String),

    /// An invalid configuration value or combination.
    #[error("config error: {0}")]
    Config(String),

    /// Numerical divergence during optimisation (non-finite loss or gradient).
    #[error("training error: {0}")]
    Training(String),

    /// The caller violated an API or command-line contract.
    #[error("usage error: {0}")]
    Usage(String),

    /// An OS-level IO failure, annotated with the path involved.
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl MwError {
    /// Convenience constructor for dimension mismatches.
    pub fn dim(op: &str, detail: impl Into<String>) -> Self {
        MwError::Dimension {
            op: op.to_string(),
            detail: detail.into(),
        }
    }

    /// Convenience constructor wrapping an IO failure with its path.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MwError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: `1` for data problems, `2` for
    /// configuration or usage problems, `3` for training divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            MwError::Dimension { .. } | MwError::Data(_) | MwError::Io { .. } => 1,
            MwError::Config(_) | MwError::Usage(_) => 2,
            MwError::Training(_) => 3,
        }
    }
}
