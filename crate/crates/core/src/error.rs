use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("circulant embedding of {model} at n = {n} is not nonnegative definite (min eigenvalue {min_eigenvalue:.3e}, max {max_eigenvalue:.3e})")]
    NonEmbeddable {
        model: String,
        n: usize,
        min_eigenvalue: f64,
        max_eigenvalue: f64,
    },

    #[error("value {value} outside tabulated range [{lo}, {hi}]")]
    Extrapolation { value: f64, lo: f64, hi: f64 },

    #[error("kernel evaluation produced a non-finite value at ({x}, {y})")]
    Evaluation { x: f64, y: f64 },

    #[error("Hermite rank not detectable up to total degree {0}")]
    RankNotFound(usize),

    #[error("reduction regime violated: m·D = {0} must be < 1")]
    Regime(f64),

    #[error("path already normalized")]
    AlreadyNormalized,

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by user input or configuration rather than
    /// internal numeric failure.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::Parameter(_)
                | Error::Input(_)
                | Error::Extrapolation { .. }
                | Error::Regime(_)
                | Error::Unsupported(_)
                | Error::AlreadyNormalized
                | Error::Io(_)
                | Error::Csv(_)
                | Error::Json(_)
        )
    }
}
