use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid decay rate {0}: must lie strictly between 0 and 1")]
    InvalidDecayRate(f64),

    #[error("invalid half-life {0} tokens: must be positive and finite")]
    InvalidHalfLife(f64),

    #[error("invalid tokens per step: batch size {batch_size} and sequence length {seq_len} must both be positive")]
    InvalidTokensPerStep { batch_size: u64, seq_len: u64 },

    #[error("shape mismatch for `{name}`: expected {expected}, got {got}")]
    ShapeMismatch {
        name: String,
        expected: String,
        got: String,
    },

    #[error("structure mismatch: {0}")]
    Structure(String),

    #[error("invalid value for `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("cannot finalize an empty gradient accumulator")]
    EmptyAccumulator,

    #[error("newton-schulz iteration needs a nonzero matrix")]
    ZeroMatrix,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    /// True for errors caused by bad input rather than a failure while running.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidDecayRate(_)
                | Error::InvalidHalfLife(_)
                | Error::InvalidTokensPerStep { .. }
                | Error::Config { .. }
                | Error::Json(_)
        )
    }
}
