use std::path::PathBuf;

use thiserror::Error;

/// Failure of a command; [`BenchError::exit_code`] maps it to the process status.
#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{0}")]
    Usage(String),

    #[error("config {source_name} line {line}: {detail}")]
    Config {
        source_name: String,
        line: usize,
        detail: String,
    },

    #[error(transparent)]
    Load(#[from] LoadError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{path} line {line}: {detail}")]
    Format {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error(transparent)]
    Core(#[from] rff_core::Error),

    #[error("{0}")]
    Failed(String),
}

impl BenchError {
    /// 1 for anything rejected before computing, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Usage(_) | BenchError::Config { .. } | BenchError::Load(_) => 1,
            BenchError::Core(rff_core::Error::Config(_)) => 1,
            BenchError::Io { .. }
            | BenchError::Format { .. }
            | BenchError::Core(_)
            | BenchError::Failed(_) => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        BenchError::Io {
            path: path.into(),
            source,
        }
    }
}

/// Problems found while reading a dataset directory. Rows are 1-based.
#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{file}: missing file")]
    MissingFile { file: String },

    #[error("{file} row {row}: cannot read file: {detail}")]
    Unreadable { file: String, row: usize, detail: String },

    #[error("{file} row {row}: malformed value {value:?}")]
    Malformed { file: String, row: usize, value: String },

    #[error("{file} row {row}: dimension mismatch: {detail}")]
    DimensionMismatch { file: String, row: usize, detail: String },

    #[error("{file} row {row}: label out of range: {label} is not below {classes}")]
    LabelOutOfRange {
        file: String,
        row: usize,
        label: usize,
        classes: usize,
    },

    #[error("{file} row {row}: split overlap: {detail}")]
    SplitOverlap { file: String, row: usize, detail: String },

    #[error("{file} row {row}: {detail}")]
    InvalidSplit { file: String, row: usize, detail: String },
}

pub type Result<T, E = BenchError> = std::result::Result<T, E>;
