use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// Total weight below the degenerate threshold; the mask is effectively empty.
    #[error("degenerate weights: total {total:.3e} below threshold {threshold:.3e}")]
    DegenerateWeights { total: f64, threshold: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("scene generation failed after {rejections} rejections")]
    GenerationFailed { rejections: usize },

    #[error("bad magic at byte offset {offset}")]
    BadMagic { offset: u64 },

    #[error("unsupported version {version} at byte offset {offset}")]
    UnsupportedVersion { version: u32, offset: u64 },

    #[error("truncated file: expected {needed} bytes at byte offset {offset}")]
    TruncatedFile { offset: u64, needed: usize },

    #[error("scene file has no flow block; segmentation requires flow")]
    MissingFlow,

    #[error("scene file has no label block")]
    MissingLabels,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
