use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("row {0} has (near) zero L2 norm")]
    ZeroVector(usize),

    #[error("row {row} has a non-finite entry")]
    NonFinite { row: usize },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("need {needed} candidates but only {available} remain")]
    InsufficientCandidates { needed: usize, available: usize },

    #[error("expected a raw cosine similarity matrix")]
    NotRawSimilarity,

    #[error("batch pairing must be a bijection: {0}")]
    NotBijective(String),

    #[error("inverted softmax needs at least 2 queries, got {0}")]
    TooFewQueries(usize),

    #[error("query {0} has no ground-truth item")]
    MissingGroundTruth(usize),

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("loss diverged at epoch {epoch}: {value}")]
    DivergedLoss { epoch: usize, value: f64 },
}
