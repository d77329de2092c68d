use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("numeric divergence: {0}")]
    Divergence(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] CheckpointError),

    #[error("ratio undefined: denominator has zero example updates")]
    UndefinedRatio,

    #[error("reports are not comparable: {0}")]
    Comparison(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Failures specific to reading or writing checkpoint files. Each kind is
/// reported distinctly so callers can tell corruption from version skew.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("bad magic bytes {0:02x?}")]
    BadMagic([u8; 4]),

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),

    #[error("truncated file: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error(
        "payload checksum mismatch: header says {expected:#010x}, payload hashes to {actual:#010x}"
    )]
    ChecksumMismatch { expected: u32, actual: u32 },

    #[error("header checksum mismatch: stored {expected:#010x}, header hashes to {actual:#010x}")]
    HeaderChecksumMismatch { expected: u32, actual: u32 },

    #[error("inconsistent header: {0}")]
    Inconsistent(String),

    #[error("refusing to serialize non-finite parameter in {0}")]
    NonFinite(&'static str),
}
