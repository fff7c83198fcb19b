use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("binomial tree unstable: risk-neutral probability {q} outside (0, 1) (step {dt}, sigma {sigma}, rate {rate})")]
    Unstable { q: f64, dt: f64, sigma: f64, rate: f64 },

    #[error("malformed path sample file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
