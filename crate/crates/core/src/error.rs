use thiserror::Error;

/// Errors produced by the reconciliation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("singular system in {context}: {detail}")]
    Singular { context: String, detail: String },

    #[error("matrix is not positive semidefinite: min eigenvalue {min_eigenvalue:e}, max eigenvalue {max_eigenvalue:e}")]
    NotPositiveSemidefinite {
        min_eigenvalue: f64,
        max_eigenvalue: f64,
    },

    #[error("covariance kind {kind} requires {required} residuals, got {found}")]
    ResidualKindMismatch {
        kind: String,
        required: &'static str,
        found: &'static str,
    },

    #[error("missing residuals for covariance kind {0}")]
    MissingResiduals(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("replicate {replicate}: {source}")]
    Replicate {
        replicate: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn dims(context: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    /// True for failures of the numerical kind (singular systems, indefinite
    /// matrices) as opposed to malformed input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Singular { .. } | Error::NotPositiveSemidefinite { .. } => true,
            Error::Replicate { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
