//! Error types shared across the toolkit.

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Failure modes of a model file on disk.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelFileError {
    #[error("not a model file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported model format version {found} (supported: {supported})")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("model file is truncated or corrupt: {0}")]
    Truncated(String),
    #[error("feature fingerprint mismatch (model {model:#018x}, expected {expected:#018x})")]
    FingerprintMismatch { model: u64, expected: u64 },
}

#[derive(Debug, Error)]
pub enum Error {
    /// A word without any alphabetic character was handed to syllable counting.
    #[error("invalid word for syllable counting: {0:?}")]
    InvalidWord(String),

    /// A computation was asked for on an input with a zero denominator
    /// (for example readability indices on an essay with no sentences).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Malformed input data (dataset files, prediction files, tag files).
    #[error("data error: {0}")]
    Data(String),

    /// A label string that is not one of A1..C2, with the offending row.
    #[error("row {row}: {value:?} is not a CEFR level")]
    Label { row: usize, value: String },

    /// Two essays with the same id in one dataset.
    #[error("duplicate essay id {0:?}")]
    DuplicateId(String),

    /// A resource file (dictionary, embeddings, lexicon) is missing or unreadable.
    #[error("resource {kind:?} at {path:?}: {reason}")]
    Resource {
        kind: &'static str,
        path: String,
        reason: String,
    },

    /// Invalid configuration or invalid arguments to an operation.
    #[error("config error: {0}")]
    Config(String),

    #[error("model file error: {0}")]
    ModelFile(#[from] ModelFileError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code the CLI maps this error to.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Resource { .. } => 4,
            Error::Io(_) => 4,
            _ => 3,
        }
    }
}
