use std::path::PathBuf;

use crate::amp::AmpResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("quadrature oracle failed to converge: {0}")]
    OracleFailure(String),

    #[error("numerical consistency check failed: {0}")]
    Consistency(String),

    #[error("non-monotone predicate across bracket: {samples:?}")]
    Scan { samples: Vec<(f64, bool)> },

    #[error("message passing diverged at iteration {iteration}")]
    Divergence {
        iteration: usize,
        partial: Box<AmpResult>,
    },

    #[error(transparent)]
    File(#[from] FileError),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

/// Failures reading or writing instance files.
#[derive(Debug, thiserror::Error)]
pub enum FileError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic header (expected \"MFAMP1\")")]
    BadMagic,

    #[error("unsupported format version {0:?}")]
    UnsupportedVersion(char),

    #[error("truncated file: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("malformed file: {0}")]
    Format(String),
}
