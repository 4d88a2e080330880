//! Configuration-driven front end for the deepfosls solver: training,
//! evaluation and the numerical self-checks.

pub mod commands;
pub mod config;
mod output;

pub use config::{ActivationKind, NetConfig, NetsConfig, Seeds, SliceConfig, TrainConfig};

/// Failure of a command, grouped by exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("numeric failure: non-finite `{term}` at iteration {iteration}")]
    Numeric { iteration: usize, term: String },

    #[error("check failed: {0}")]
    Check(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Solver(deepfosls::Error),
}

impl CliError {
    /// 2 for configuration problems, 3 for divergence, 4 for a failed
    /// check, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric { .. } => 3,
            CliError::Check(_) => 4,
            CliError::Io(_) | CliError::Solver(_) => 1,
        }
    }
}

impl From<deepfosls::Error> for CliError {
    fn from(e: deepfosls::Error) -> Self {
        use deepfosls::Error as E;
        match e {
            E::NonFinite { iteration, term } => CliError::Numeric { iteration, term },
            E::UnknownBenchmark(_) | E::InvalidSpec(_) | E::InvalidArgument(_) => {
                CliError::Config(e.to_string())
            }
            E::Io(io) => CliError::Io(io),
            other => CliError::Solver(other),
        }
    }
}
