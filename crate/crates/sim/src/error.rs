use crate::config::ConfigError;

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const PARTIAL_FAILURE: i32 = 1;
    pub const INVALID_INPUT: i32 = 2;
    pub const NON_CONVERGENCE: i32 = 3;
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid input: {0}")]
    Input(#[from] elmarket_core::Error),
    #[error("solver did not converge; diagnostics in {0}")]
    NonConvergence(String),
    #[error("{failed} of {total} points failed")]
    Partial { failed: usize, total: usize },
    #[error("{failed} of {total} verification checks failed")]
    Verification { failed: usize, total: usize },
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot write CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("cannot write JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl SimError {
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Partial { .. } | SimError::Verification { .. } => exit::PARTIAL_FAILURE,
            SimError::NonConvergence(_) => exit::NON_CONVERGENCE,
            _ => exit::INVALID_INPUT,
        }
    }
}

pub type Result<T> = std::result::Result<T, SimError>;
