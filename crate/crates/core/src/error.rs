use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A row could not be parsed. `row` is the zero-based data row index
    /// (the header is not counted).
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    /// A row parsed but violates a value constraint.
    #[error("validation error at row {row}: {message}")]
    Validation { row: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    /// An argument lies outside the mathematical domain of a function.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("curve error: {0}")]
    Curve(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Whether the error stems from bad user input rather than a runtime failure.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Validation { .. }
                | Error::Schema(_)
                | Error::Domain(_)
                | Error::Input(_)
                | Error::Config(_)
                | Error::Json(_)
                | Error::Csv(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
