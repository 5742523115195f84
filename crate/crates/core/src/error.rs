use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed or inconsistent input values.
    #[error("invalid input: {0}")]
    Input(String),

    /// A requested size exceeds what the data or a guard allows.
    #[error("size error: {0}")]
    Size(String),

    /// Too few usable points on a quantile curve to fit the power law.
    #[error("power-law fit needs at least {required} usable points, got {usable}")]
    Fit { usable: usize, required: usize },

    /// The spectrum of the centered kernel is degenerate (point mass).
    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    /// An experiment source produced a malformed result.
    #[error("ingestion error at iteration {iteration}: {message}")]
    Ingest { iteration: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// True for failures caused by the numbers rather than the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Numeric(_) | Error::Fit { .. } | Error::Degenerate(_)
        )
    }
}
