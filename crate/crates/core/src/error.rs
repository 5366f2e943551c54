use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input file is missing a required column or has an unreadable header.
    #[error("schema error: {0}")]
    Schema(String),

    /// Data violates a structural invariant (ordering, lengths, signs).
    #[error("validation error: {0}")]
    Validation(String),

    /// A parameter or argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A Paris-law path with exponent above 2 diverges in finite time.
    #[error("path diverges at t = {blow_up_time}")]
    Singularity { blow_up_time: f64 },

    /// Observed increments are incompatible with the process law.
    #[error("data error for unit {unit}: {message}")]
    Data { unit: String, message: String },

    #[error("numerical error: {0}")]
    Numerical(String),

    /// Extrapolation outside the range a fitted curve can reach.
    #[error("extrapolation error: {message} (attainable range {low}..{high})")]
    Extrapolation { message: String, low: f64, high: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
