use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("{0}")]
    Domain(String),

    #[error(
        "optimizer did not converge after {iterations} iterations \
         (gradient norm {gradient_norm:.3e}, objective {objective:.6}, lambda {lambda:.3e})"
    )]
    NonConvergence {
        iterations: usize,
        gradient_norm: f64,
        objective: f64,
        lambda: f64,
    },

    #[error("incompatible model artifact: schema version {found}, expected {expected}")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("unknown report format {0:?} (supported: csv, json)")]
    UnknownFormat(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
