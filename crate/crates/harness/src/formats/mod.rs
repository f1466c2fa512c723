//! On-disk formats: camera and anchor JSON, text point and match lists,
//! 8-bit PNG images, binary checkpoints and CSV tables.

pub mod checkpoint;
pub mod csv;
pub mod json;
pub mod png;
pub mod text;

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("{path}: bad checkpoint magic")]
    BadMagic { path: PathBuf },
    #[error("{path}: checkpoint version {found}, expected {expected}")]
    Version { path: PathBuf, found: u8, expected: u8 },
    #[error("{path}: truncated")]
    Truncated { path: PathBuf },
    #[error("{path}: image is {found:?}, expected {expected:?}")]
    Resolution {
        path: PathBuf,
        found: (usize, usize),
        expected: (usize, usize),
    },
}

impl FormatError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FormatError::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        FormatError::Parse { path: path.into(), msg: msg.into() }
    }
}

pub type Result<T> = std::result::Result<T, FormatError>;
