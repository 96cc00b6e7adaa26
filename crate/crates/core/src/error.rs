use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("step index {t} outside 1..={steps}")]
    StepIndex { t: usize, steps: usize },

    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    Shape {
        context: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}: row {row}, column {column}: cannot parse {cell:?} as a number")]
    NonNumeric {
        path: PathBuf,
        row: usize,
        column: usize,
        cell: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("training diverged: {0}")]
    Training(String),

    #[error(
        "negative discriminant solving for the target variance at step {t} \
         (lambda0={lambda0:e}, lambda1={lambda1:e}, lambda2={lambda2:e})"
    )]
    Solver {
        t: usize,
        lambda0: f64,
        lambda1: f64,
        lambda2: f64,
    },

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable class used by the command line front end.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::StepIndex { .. } => "index",
            Error::Shape { .. } => "shape",
            Error::Data(_) | Error::NonNumeric { .. } => "data",
            Error::InvalidInput(_) => "invalid-input",
            Error::Training(_) => "training",
            Error::Solver { .. } => "solver",
            Error::Format(_) => "format",
            Error::MissingArtifact(_) => "missing-artifact",
            Error::Io { .. } => "io",
            Error::Internal(_) => "internal",
        }
    }

    /// True for failures caused by the caller's inputs rather than a defect or a numerical blow-up.
    pub fn is_user_error(&self) -> bool {
        !matches!(
            self,
            Error::Internal(_) | Error::Training(_) | Error::Solver { .. } | Error::Shape { .. }
        )
    }
}
