use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point {point:?} lies outside the domain of model `{model}`")]
    OutOfDomain { model: String, point: Vec<f64> },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("enumeration of {cases} cases exceeds the limit of {limit}")]
    TooLarge { cases: u128, limit: u128 },

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
