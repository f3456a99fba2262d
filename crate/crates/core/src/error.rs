use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("Hermite order q = {0} is outside the supported range 1..=20")]
    OrderOutOfRange(u32),

    #[error("Hurst index {value} on axis {axis} is outside (1/2, 1)")]
    HurstOutOfRange { axis: usize, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("grid of {cells} cells exceeds the memory cap of {cap} cells")]
    MemoryCap { cells: usize, cap: usize },

    #[error("circulant embedding has a negative eigenvalue {0:e}")]
    NotPositiveDefinite(f64),

    #[error("out of scope: {0}")]
    OutOfScope(String),

    #[error("zero variation")]
    ZeroVariation,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("malformed field dump: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
