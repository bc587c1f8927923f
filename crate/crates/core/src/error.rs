use thiserror::Error;

/// Errors produced by tensor construction, matching, scene generation and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("index {index} out of range (bound {bound})")]
    IndexOutOfRange { index: usize, bound: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid tensor data: {0}")]
    InvalidData(String),

    #[error("bad magic {found:?}, expected \"EMT1\"")]
    BadMagic { found: [u8; 4] },

    #[error("length mismatch: expected {expected} bytes, found {actual}")]
    Length { expected: usize, actual: usize },

    #[error("unsupported tensor rank {0} (expected 2 or 3)")]
    UnsupportedRank(u8),

    #[error("scene generation failed: {0}")]
    Generation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn mismatch(msg: impl Into<String>) -> Error {
    Error::DimensionMismatch(msg.into())
}
