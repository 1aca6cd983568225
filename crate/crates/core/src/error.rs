use thiserror::Error;

/// Errors raised by the engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("index {index} out of range (expected < {bound})")]
    IndexOutOfRange { index: usize, bound: usize },

    #[error("vector is not horizontal: theta(v) = {value:e}")]
    NonHorizontal { value: f64 },

    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("grid too small: {0}")]
    GridTooSmall(String),

    #[error("chart overflow: |y| = {norm} exceeds bound {bound}")]
    ChartOverflow { norm: f64, bound: f64 },

    #[error("mismatched fields: {0}")]
    Mismatch(String),

    #[error("zero covector has no symbol")]
    ZeroCovector,

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("unknown check id `{0}`")]
    UnknownCheck(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
