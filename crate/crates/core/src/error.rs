use thiserror::Error;

use crate::market::{GeneratorId, MarketModel};
use crate::risk::StartDiagnostics;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what}: expected {expected} entries, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("scenario index {index} out of range (instance has {count} scenarios)")]
    ScenarioIndex { index: usize, count: usize },

    #[error("unknown generator {0:?}")]
    UnknownGenerator(GeneratorId),

    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },

    /// `beta_spot * (1 + delta) + cost_c` fell below the singularity floor.
    #[error(
        "degenerate conduct/cost for conventional generator {generator} in scenario {scenario}: \
         beta*(1+delta)+c = {value:e}"
    )]
    DegenerateConduct {
        generator: usize,
        scenario: usize,
        value: f64,
    },

    #[error("operation requires the {expected} model, instance uses {found}")]
    ModelMismatch {
        expected: &'static str,
        found: MarketModel,
    },

    #[error("probabilities sum to {sum}, expected 1")]
    ProbabilityMass { sum: f64 },

    #[error("truncated draw for {family} still below its floor after {retries} retries")]
    TruncationExhausted { family: &'static str, retries: usize },

    #[error("best-response iteration did not converge after {iterations} iterations (last change {last_change:e})")]
    OracleNonConvergence {
        iterations: usize,
        last_change: f64,
        last_iterate: Vec<f64>,
    },

    #[error("no start reached an accepted equilibrium ({} attempted)", .0.len())]
    NoConvergence(Vec<StartDiagnostics>),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            found,
        })
    }
}
