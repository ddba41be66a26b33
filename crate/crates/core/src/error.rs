use thiserror::Error;

/// Errors produced anywhere in the library.
///
/// Each variant maps onto one of the machine-readable codes used by the
/// command-line front end (see [`Error::code`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("rank-deficient design: column `{column}` is not estimable ({detail})")]
    Rank { column: String, detail: String },

    #[error("singular information matrix: {0}")]
    Singular(String),

    #[error("optimizer did not converge: {0}")]
    Convergence(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Stable error code, e.g. `E_CONFIG`.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Config(_) => "E_CONFIG",
            Error::Rank { .. } | Error::Singular(_) => "E_RANK",
            Error::Convergence(_) => "E_CONVERGENCE",
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => "E_IO",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
