use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("weight vector is empty")]
    EmptyVector,
    #[error("weight {index} is negative ({value})")]
    NegativeWeight { index: usize, value: f64 },
    #[error("weights sum to {sum}, expected 1")]
    NotNormalized { sum: f64 },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid Dirichlet concentration at {index}: {value}")]
    InvalidConcentration { index: usize, value: f64 },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("prompt {prompt_id}: candidate {candidate_id} is missing dimension {dimension:?}")]
    MissingDimension {
        prompt_id: String,
        candidate_id: String,
        dimension: String,
    },
    #[error("prompt {prompt_id}: candidate {candidate_id} has undeclared dimension {dimension:?}")]
    UnknownDimension {
        prompt_id: String,
        candidate_id: String,
        dimension: String,
    },
    #[error("prompt {prompt_id}: duplicate candidate id {candidate_id}")]
    DuplicateCandidateId { prompt_id: String, candidate_id: String },
    #[error("prompt {prompt_id}: {count} candidates, need at least 2")]
    TooFewCandidates { prompt_id: String, count: usize },
    #[error("non-finite score {value} for candidate {candidate_id} in dimension {dimension:?}")]
    NonFiniteScore {
        candidate_id: String,
        dimension: String,
        value: f64,
    },
    #[error("negative score {value} for candidate {candidate_id} in dimension {dimension:?} (normalized mode needs scores >= 0 with a positive total)")]
    NegativeScore {
        candidate_id: String,
        dimension: String,
        value: f64,
    },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("only N = 2 is supported here, got N = {0}")]
    UnsupportedN(usize),
    #[error("invalid target distribution: {0}")]
    InvalidTarget(String),

    #[error("policy has no parameter for prompt {prompt_id}, candidate {candidate_id}")]
    MissingParameter { prompt_id: String, candidate_id: String },
    #[error("reference log-probability missing for prompt {prompt_id}, candidate {candidate_id}")]
    MissingReference { prompt_id: String, candidate_id: String },
    #[error("non-finite log-ratio for candidate index {index}")]
    NonFiniteLogRatio { index: usize },

    #[error("candidate set is empty")]
    EmptyCandidates,
    #[error("no observations to fit")]
    NoObservations,
    #[error("linear solve failed: {0}")]
    Solve(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(
        "loss became non-finite at step {step} (epoch {epoch}); parameters restored to the last finite state"
    )]
    DivergenceDetected { step: usize, epoch: usize },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("malformed model file: {0}")]
    ModelFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
