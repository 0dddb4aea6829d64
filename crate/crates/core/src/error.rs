use thiserror::Error;

/// Errors raised by the problem model, the generators and the solvers.
#[derive(Debug, Error)]
pub enum ImbaError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {message}")]
    Numerical {
        message: String,
        /// Flattened offending iterate, when one is available.
        iterate: Option<Vec<f64>>,
    },

    #[error("malformed instance: {0}")]
    Format(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ImbaError>;

impl ImbaError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        ImbaError::InvalidArgument(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>, iterate: Option<Vec<f64>>) -> Self {
        ImbaError::Numerical {
            message: msg.into(),
            iterate,
        }
    }
}
