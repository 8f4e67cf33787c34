use thiserror::Error;

/// Errors surfaced by the map-creation and adaptation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A vector or matrix had the wrong dimensions for the operation.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A configuration value is out of range or inconsistent.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A serialized archive (or other on-disk artifact) is malformed.
    #[error("format error: {0}")]
    Format(String),

    /// A numeric operation failed (NaN input, singular system, ...).
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// An operation that needs at least one stored policy found none.
    #[error("archive is empty")]
    EmptyArchive,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
