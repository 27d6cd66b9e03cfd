//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, KelpError>;

#[derive(Debug, Error)]
pub enum KelpError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate kernel: the centered Gram matrix has no positive eigenvalues")]
    DegenerateKernel,

    #[error("objective diverged to a non-finite value at iteration {iteration}")]
    Diverged {
        iteration: usize,
        /// Objective values recorded before the divergence.
        trace: Vec<f64>,
    },

    #[error("hold-out mask is empty after {attempts} attempts")]
    EmptyHoldout { attempts: usize },

    #[error("held-out entries are single-class after {attempts} attempts")]
    SingleClassHoldout { attempts: usize },

    #[error("linear algebra failure: {0}")]
    Linalg(#[from] ndarray_linalg::error::LinalgError),
}

impl KelpError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        KelpError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        KelpError::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
