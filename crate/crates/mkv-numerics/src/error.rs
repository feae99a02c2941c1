use thiserror::Error;

use crate::simulator::PicardReport;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown problem `{0}`")]
    UnknownProblem(String),

    #[error("unsupported input: {0}")]
    Unsupported(String),

    #[error("non-finite value at particle {index}")]
    NonFinite { index: usize },

    #[error("flow grid [{start}, {end}] does not cover [{t}, {s}]")]
    Coverage { start: f64, end: f64, t: f64, s: f64 },

    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("time {s} is not after {t}")]
    TimeOrder { t: f64, s: f64 },

    #[error("perturbation step {epsilon} is lost in rounding at {value}")]
    DegenerateStep { epsilon: f64, value: f64 },

    #[error("k = {k} is below the threshold K = {threshold}")]
    Domain { k: usize, threshold: usize },

    #[error("grid too coarse: {0}")]
    Resolution(String),

    #[error("Picard iteration did not converge after {} iterations", .0.increments.len())]
    NotConverged(Box<PicardReport>),

    #[error("grid mismatch: expected {expected} values, got {got}")]
    GridMismatch { expected: usize, got: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
