use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("bad magic {found:?} (expected {expected:?})")]
    BadMagic { found: Vec<u8>, expected: Vec<u8> },
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated {what} at offset {offset}")]
    Truncated { what: &'static str, offset: u64 },
    #[error("tensor {name:?}: byte range {offset}+{len} outside payload of {payload} bytes")]
    OffsetOverflow {
        name: String,
        offset: u64,
        len: u64,
        payload: u64,
    },
    #[error("tensors {first:?} and {second:?} overlap in the payload")]
    Overlap { first: String, second: String },
    #[error("header declares {declared} elements but payload holds {actual}")]
    CountMismatch { declared: u64, actual: u64 },
    #[error("tensor {name:?}: {message}")]
    TensorShape { name: String, message: String },
    /// JSON that does not match its schema, with the offending field path.
    #[error("{file}: at {path}: {message}")]
    Schema {
        file: String,
        path: String,
        message: String,
    },
    #[error("idx: {message} at offset {offset}")]
    Idx { message: String, offset: u64 },
    #[error(transparent)]
    Core(#[from] faultrange_core::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
