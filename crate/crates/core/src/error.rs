use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, AdbError>;

#[derive(Debug, Error)]
pub enum AdbError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("dimension mismatch{}: expected {expected}, found {found}", line_suffix(*.line))]
    DimensionMismatch {
        expected: usize,
        found: usize,
        line: Option<u64>,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("model format error: {0}")]
    ModelFormat(String),

    #[error("i/o error on {}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn line_suffix(line: Option<u64>) -> String {
    match line {
        Some(l) => format!(" at line {l}"),
        None => String::new(),
    }
}

impl AdbError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        AdbError::InvalidArgument(msg.into())
    }

    pub(crate) fn dim(expected: usize, found: usize) -> Self {
        AdbError::DimensionMismatch {
            expected,
            found,
            line: None,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AdbError::Io {
            path: path.into(),
            source,
        }
    }
}
