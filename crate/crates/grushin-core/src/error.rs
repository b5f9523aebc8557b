use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("truncation error: {0}")]
    Truncation(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("classification error: {0}")]
    Classification(String),
    #[error("degenerate gap between E_{n} and E_{m}")]
    DegenerateGap { n: usize, m: usize },
    #[error("unsupported order s = {0}; expected 0 < s < 2")]
    UnsupportedOrder(f64),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
