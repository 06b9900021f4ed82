use std::path::PathBuf;

/// Errors produced by the cost-map learning pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid grid specification: {0}")]
    InvalidSpec(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("cell ({row}, {col}) lies outside the grid")]
    OutOfGrid { row: i64, col: i64 },

    #[error("consecutive cells {from:?} and {to:?} are not 8-adjacent; densify the path first")]
    NotAdjacent { from: (usize, usize), to: (usize, usize) },

    #[error("goal unreachable: {0}")]
    Unreachable(String),

    #[error("world generation failed: {0}")]
    Generation(String),

    #[error("numerical abort: {0}")]
    Numerical(String),

    #[error("malformed data in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
