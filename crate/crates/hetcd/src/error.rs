use std::path::{Path, PathBuf};

use hetcd_core::graph::GraphError;
use hetcd_core::train::TrainError;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const VALIDATION: i32 = 2;
    pub const NUMERIC: i32 = 3;
    pub const IO: i32 = 4;
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{}, line {line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("target node {node} has no label")]
    MissingLabel { node: usize },
    #[error("target node {node} is labeled more than once")]
    DuplicateLabel { node: usize },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("checkpoint {}: {reason}", path.display())]
    Checkpoint { path: PathBuf, reason: String },
    #[error("config override `{0}`: {1}")]
    Override(String, String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("{failed} verification check(s) failed in: {}", modules.join(", "))]
    Verify { failed: usize, modules: Vec<String> },
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }

    pub fn csv(path: &Path, source: csv::Error) -> Self {
        match source.kind() {
            csv::ErrorKind::Io(_) => match source.into_kind() {
                csv::ErrorKind::Io(e) => Error::io(path, e),
                _ => unreachable!(),
            },
            _ => Error::Csv {
                path: path.to_path_buf(),
                source,
            },
        }
    }

    pub fn json(path: &Path, source: serde_json::Error) -> Self {
        if source.is_io() {
            Error::Io {
                path: path.to_path_buf(),
                source: source.into(),
            }
        } else {
            Error::Json {
                path: path.to_path_buf(),
                source,
            }
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::MissingFile(_) | Error::Io { .. } | Error::Checkpoint { .. } => exit::IO,
            Error::Train(e) if e.is_numeric() => exit::NUMERIC,
            Error::Verify { .. } => exit::NUMERIC,
            _ => exit::VALIDATION,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
