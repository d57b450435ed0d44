use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("task generation failed for {subset} (seed {seed}) after {attempts} attempts")]
    Generator {
        subset: String,
        seed: u64,
        attempts: usize,
    },

    #[error("planner found no plan: {0}")]
    Planner(String),

    #[error("unresolved action name {0:?}")]
    UnresolvedAction(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Process exit codes used by the command-line tool.
pub mod exit {
    pub const OTHER: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const IO: i32 = 3;
    pub const FORMAT: i32 = 4;
    pub const NUMERIC: i32 = 5;
    pub const GENERATOR: i32 = 6;
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) | Error::InvalidArgument(_) => exit::USAGE,
            Error::Io { .. } => exit::IO,
            Error::Format { .. } | Error::Shape { .. } | Error::Checkpoint(_) | Error::Dataset(_) => exit::FORMAT,
            Error::Numeric(_) => exit::NUMERIC,
            Error::Generator { .. } | Error::Planner(_) => exit::GENERATOR,
            Error::UnresolvedAction(_) => exit::OTHER,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
