//! Error type shared by every stage of the pipeline.

use std::path::PathBuf;

use thiserror::Error;

/// Everything that can go wrong inside the library.
///
/// Variants are deliberately coarse: callers mostly need to distinguish
/// "the inputs disagree" from "the data on disk is broken" from "the OS
/// failed us". The CLI maps these onto its exit codes.
#[derive(Debug, Error)]
pub enum Error {
    /// Two inputs disagree on a shape the operation requires to match.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A world point lies at or behind the camera's principal plane.
    #[error("point is not in front of the camera (depth {depth:.3e} m)")]
    NotInFront { depth: f64 },

    /// An operation over a frame sequence received no frames.
    #[error("frame sequence is empty")]
    EmptySequence,

    /// A displacement search radius exceeds what the map can support.
    #[error("search radius {radius} px exceeds limit {limit} px for this map")]
    RadiusTooLarge { radius: usize, limit: usize },

    /// The query map carries no usable content (fully masked or all zero).
    #[error("query map is fully masked or zero")]
    DegenerateQuery,

    /// No valid cell survived a similarity search.
    #[error("every cell of the similarity field is invalid")]
    AllCellsInvalid,

    /// Batch operations need at least two samples.
    #[error("batch of {0} is too small, need at least 2")]
    BatchTooSmall(usize),

    /// A ranked id is missing from the location table.
    #[error("unknown id {0:?}")]
    UnknownId(String),

    /// A constructor or operation rejected its arguments.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A file exists but its contents are malformed.
    #[error("{}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },

    /// An underlying I/O failure, annotated with the path involved.
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
