use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("support is not enumerable: {0}")]
    NotEnumerable(String),

    #[error("support size {size} exceeds enumeration cap {cap}")]
    CapExceeded { size: String, cap: u128 },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("value {value} is outside the support of block {block}")]
    OutsideSupport { block: usize, value: u64 },

    #[error("gain is undefined for the empty prefix")]
    EmptyPrefix,

    #[error("no block left to tamper: prefix already has all {0} blocks")]
    FullPrefix(usize),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("degenerate setting: {0}")]
    Degenerate(String),

    #[error("unknown learner `{0}`")]
    UnknownLearner(String),

    #[error("external process: {0}")]
    External(String),

    #[error("config: {0}")]
    Config(String),

    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name: name.into(), reason: reason.into() }
    }
}
