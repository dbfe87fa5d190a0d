use thiserror::Error;

/// Errors raised by the solvers and their supporting constructions.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported nonlinearity: {0}")]
    UnsupportedNonlinearity(String),

    #[error("invalid nonlinearity: {0}")]
    InvalidNonlinearity(String),

    #[error("truncation failure: {0}")]
    TruncationFailure(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("mountain-pass geometry failure: {0}")]
    Geometry(String),

    #[error("inner solver did not converge after {iterations} iterations (gradient norm {grad_norm:.3e})")]
    NonConvergence {
        iterations: usize,
        grad_norm: f64,
        last_iterate: Vec<f64>,
    },

    #[error("minimax failure: {0}")]
    Minimax(String),

    #[error("shooting failure: {0}")]
    Shooting(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::UnsupportedNonlinearity(_) => "unsupported_nonlinearity",
            Error::InvalidNonlinearity(_) => "invalid_nonlinearity",
            Error::TruncationFailure(_) => "truncation_failure",
            Error::DegenerateInput(_) => "degenerate_input",
            Error::Precondition(_) => "precondition",
            Error::Geometry(_) => "geometry",
            Error::NonConvergence { .. } => "nonconvergence",
            Error::Minimax(_) => "minimax_failure",
            Error::Shooting(_) => "shooting_failure",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
