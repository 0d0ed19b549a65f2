use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A block, dataset, model or experiment specification is invalid.
    #[error("invalid specification: {0}")]
    Spec(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unknown feature group `{0}`")]
    UnknownGroup(String),

    #[error("empty input: {0}")]
    Empty(String),

    /// NaN or infinite values where finite numbers are required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged at step {step} (loss {loss})")]
    Divergence { step: usize, loss: f64 },

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("file format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("truncated file {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("checksum mismatch for {path}: header says {expected}, data hashes to {found}")]
    Checksum {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn spec(msg: impl Into<String>) -> Self {
        Error::Spec(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Divergence { .. } | Error::NonFinite(_) => 3,
            Error::Io(_)
            | Error::Truncated { .. }
            | Error::Checksum { .. }
            | Error::VersionMismatch { .. }
            | Error::Format { .. }
            | Error::Csv(_) => 4,
            _ => 2,
        }
    }
}
