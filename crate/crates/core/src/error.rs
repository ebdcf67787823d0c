use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = DadaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DadaError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("index out of range in {op}: {index} >= {bound}")]
    Index {
        op: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DadaError {
    pub fn contract(msg: impl Into<String>) -> Self {
        DadaError::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        DadaError::Config(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        DadaError::Numeric(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DadaError::Io {
            path: path.into(),
            source,
        }
    }
}
