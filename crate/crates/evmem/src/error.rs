//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any evmem operation.
#[derive(Debug, Error)]
pub enum EvmemError {
    /// Invalid configuration value (bad dimension, cell count, rate, ...).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Malformed input file; `line` is 1-based within the file.
    #[error("format error in {path} at line {line}: {message}")]
    Format {
        path: String,
        line: usize,
        message: String,
    },

    /// Vector or matrix dimensions do not agree.
    #[error("shape mismatch: expected dimension {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    /// Cell index outside the memory bank.
    #[error("cell index {index} out of range for bank of {len} cells")]
    Index { index: usize, len: usize },

    /// Training produced a non-finite loss; carries the offending step.
    #[error(
        "non-finite loss {value} at epoch {epoch}, step {step} (instance {instance_id}); aborting"
    )]
    Numeric {
        instance_id: String,
        epoch: usize,
        step: usize,
        value: f64,
    },

    /// A metric was requested on inputs where it is undefined.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Internal consistency violation (mismatched forward/backward state).
    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl EvmemError {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        EvmemError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        EvmemError::Format {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, EvmemError>;
