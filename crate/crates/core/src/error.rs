use thiserror::Error;

/// Errors produced by the optimizer, model, data and experiment layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("block `{0}` is not grouped")]
    NotGrouped(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("invalid group size {group_size} for a block of length {len}")]
    BadGrouping { len: usize, group_size: usize },

    #[error("nonpositive effective diagonal {value} at index {index}")]
    NonPositiveDiagonal { index: usize, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite gradient at index {index} of block `{block}`; optimizer state poisoned")]
    PoisonedState { block: String, index: usize },

    #[error("optimizer state for block `{0}` was poisoned by an earlier non-finite gradient")]
    AlreadyPoisoned(String),

    #[error("problem dimension {dim} exceeds the oracle limit of {max}")]
    DimensionTooLarge { dim: usize, max: usize },

    #[error("feature id {id} out of range (num_features = {num_features})")]
    FeatureOutOfRange { id: usize, num_features: usize },

    #[error("undefined AUC: need at least one positive and one negative label")]
    UndefinedAuc,

    #[error("empty feature set")]
    EmptyFeatureSet,

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("non-one-hot value at line {line}")]
    NonOneHot { line: usize },

    #[error("config error at `{path}`: {reason}")]
    Config { path: String, reason: String },

    #[error("divergent trajectory at t = {0}")]
    Divergent(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by non-finite numerics (poisoned optimizer
    /// state, divergent regret runs).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::PoisonedState { .. } | Error::AlreadyPoisoned(_) | Error::Divergent(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
