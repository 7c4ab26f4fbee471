use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed file contents or header.
    #[error("format error: {0}")]
    Format(String),

    /// Well-formed input whose values are unusable (NaN, too few events, ...).
    #[error("data error: {0}")]
    Data(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Marginals that cannot be coupled (e.g. unequal total mass).
    #[error("constraint violated: {0}")]
    Constraint(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// A tape was replayed, or parameters changed since it was recorded.
    #[error("state error: {0}")]
    State(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("solver failure: {0}")]
    Solver(String),

    /// Non-finite loss or gradient during training.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable name of the failure class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Format(_) => "format",
            Error::Data(_) => "data",
            Error::Parameter(_) => "parameter",
            Error::Shape(_) => "shape",
            Error::Constraint(_) => "constraint",
            Error::Domain(_) => "domain",
            Error::State(_) => "state",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::Solver(_) => "solver",
            Error::Numeric(_) => "numeric",
            Error::Io { .. } => "io",
            Error::Config(_) => "config",
        }
    }
}
