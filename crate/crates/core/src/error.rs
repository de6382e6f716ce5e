use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("no records")]
    NoRecords,

    #[error("invalid {field}: {message}")]
    InvalidConfig { field: String, message: String },

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("non-finite value produced by {context}")]
    NonFinite { context: String },

    #[error("log of non-positive value {0}")]
    LogDomain(f64),

    #[error("tape mismatch: {0}")]
    TapeMismatch(String),

    #[error("not a checkpoint")]
    NotACheckpoint,

    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),

    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),

    #[error("rank deficient below q={0}")]
    RankDeficient(usize),

    #[error("degenerate labels")]
    DegenerateLabels,

    #[error("{0}")]
    Invalid(String),

    #[error("{}: {source}", path.display())]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Attaches the offending file to an error that does not already name one.
    pub fn in_file(path: impl Into<PathBuf>, err: Error) -> Self {
        match err {
            e @ (Error::Io { .. } | Error::InFile { .. }) => e,
            other => Error::InFile {
                path: path.into(),
                source: Box::new(other),
            },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
