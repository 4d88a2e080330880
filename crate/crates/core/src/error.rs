use thiserror::Error;

/// Errors produced by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point {point:?} lies outside the closure of the domain")]
    OutsideDomain { point: Vec<f64> },

    #[error("empty collocation batch")]
    EmptyBatch,

    #[error("degenerate simplex (volume {volume:e})")]
    DegenerateSimplex { volume: f64 },

    #[error("problem `{0}` has no exact solution")]
    MissingExact(String),

    #[error("unknown benchmark `{0}`")]
    UnknownBenchmark(String),

    #[error("non-finite value in `{term}` at iteration {iteration}")]
    NonFinite { iteration: usize, term: String },

    #[error("no convergence after {iterations} sweeps (last change {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
