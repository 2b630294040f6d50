use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("structural error: {0}")]
    Structural(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("capacity error: {0}")]
    Capacity(String),
    /// Exact Hoffman enumeration would exceed its subset budget.
    #[error("hoffman enumeration needs {subsets} subsets (budget {budget}); sampled lower bound {lower_bound}")]
    HoffmanBudget {
        subsets: u128,
        budget: u128,
        lower_bound: f64,
    },
    #[error("numeric error: {msg} (residual {residual:e})")]
    Numeric { msg: String, residual: f64 },
    #[error("contract error: {0}")]
    Contract(String),
    #[error("ingestion error: {0}")]
    Ingest(String),
    #[error("split error: {0}")]
    Split(String),
    #[error("fit error: {0}")]
    Fit(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
