use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("space mismatch: {0}")]
    SpaceMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("numeric failure{}: {what}", iteration.map(|k| format!(" at iteration {k}")).unwrap_or_default())]
    Numeric {
        iteration: Option<usize>,
        what: String,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("dense operator too large: dim {dim} exceeds {max}")]
    Oversize { dim: usize, max: usize },
}

impl Error {
    pub(crate) fn numeric(what: impl Into<String>) -> Self {
        Error::Numeric {
            iteration: None,
            what: what.into(),
        }
    }

    pub(crate) fn at_iteration(self, k: usize) -> Self {
        match self {
            Error::Numeric { what, .. } => Error::Numeric {
                iteration: Some(k),
                what,
            },
            other => other,
        }
    }
}
