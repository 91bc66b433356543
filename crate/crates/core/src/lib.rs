//! Two-stage electricity market equilibria.
//!
//! Conventional and renewable (RES) generators first trade a futures
//! contract, then deliver in a scenario-dependent spot market. Three
//! contract designs are supported:
//!
//! * [`MarketModel::Gm`]: futures with physical delivery,
//! * [`MarketModel::Cfd`]: contracts for differences, settled financially,
//! * [`MarketModel::SpotOnly`]: no futures stage at all.
//!
//! The spot stage is solved in closed form ([`spot`]), the futures stage
//! is characterised by conjectured profit derivatives ([`gradients`]) and
//! the joint equilibrium of mean/CVaR maximising generators is found by
//! [`risk::solve`], certified by the complementarity objective assembled in
//! [`risk::assemble_nlp`].

pub mod error;
pub mod gradients;
pub mod market;
pub mod risk;
pub mod scenario;
pub mod spot;

pub use error::{Error, Result};
pub use market::{
    ConductParams, ConductPreset, ConventionalGenerator, DemandCurves, FuturesBounds,
    FuturesDecision, GeneratorId, MarketInstance, MarketModel, ResGenerator,
};
pub use risk::{EquilibriumSolution, RiskConfig, SolverOptions};
pub use scenario::{CalibrationConfig, ParamFamily, ScenarioSet};
pub use spot::SpotOutcome;
