//! Mean/CVaR futures-stage equilibrium.
//!
//! Each generator maximises `(1 - phi) E[Pi] + phi CVaR_alpha(Pi)` over its
//! own futures position. [`kkt`] evaluates the first-order system of that
//! program, [`nlp`] stacks all generators into one complementarity
//! minimisation, and [`solve`] finds and certifies its zeros.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::market::check_probabilities;

pub mod kkt;
pub mod nlp;
pub mod solve;

pub use kkt::{kkt_residuals, GeneratorResiduals, KktPoint, KktReport};
pub use nlp::{assemble_nlp, ComplementarityNlp, VariableLayout};
pub use solve::{
    solve, EquilibriumSolution, SolveReport, SolverOptions, StartDiagnostics, StartKind,
};

/// Ties in the quantile search are resolved with this slack on cumulative
/// probability.
const QUANTILE_SLACK: f64 = 1e-12;

pub const DEFAULT_ALPHA: f64 = 0.90;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskConfig {
    phi: f64,
    alpha: f64,
}

impl RiskConfig {
    pub fn new(phi: f64, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&phi) {
            return Err(Error::invalid("risk.phi", format!("{phi} is outside [0, 1]")));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::invalid("risk.alpha", format!("{alpha} is outside (0, 1)")));
        }
        Ok(Self { phi, alpha })
    }

    pub fn risk_neutral() -> Self {
        Self {
            phi: 0.0,
            alpha: DEFAULT_ALPHA,
        }
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Upper bound `phi sigma / (1 - alpha)` on a tail dual.
    pub fn dual_cap(&self, sigma: f64) -> f64 {
        self.phi * sigma / (1.0 - self.alpha)
    }
}

/// `(1 - phi) E[Pi] + phi (xi - E[eta] / (1 - alpha))`.
pub fn cvar_objective(
    profits: &[f64],
    sigma: &[f64],
    risk: RiskConfig,
    xi: f64,
    eta: &[f64],
) -> Result<f64> {
    check_len("sigma", profits.len(), sigma.len())?;
    check_len("eta", profits.len(), eta.len())?;
    check_probabilities(sigma)?;
    Ok(objective_unchecked(profits, sigma, risk, xi, eta))
}

pub(crate) fn objective_unchecked(
    profits: &[f64],
    sigma: &[f64],
    risk: RiskConfig,
    xi: f64,
    eta: &[f64],
) -> f64 {
    let mean: f64 = profits.iter().zip(sigma).map(|(p, s)| p * s).sum();
    let shortfall: f64 = eta.iter().zip(sigma).map(|(e, s)| e * s).sum();
    (1.0 - risk.phi) * mean + risk.phi * (xi - shortfall / (1.0 - risk.alpha))
}

/// Scenario indices ordered by ascending profit (stable on ties).
pub(crate) fn ascending_order(profits: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..profits.len()).collect();
    order.sort_by(|&a, &b| profits[a].total_cmp(&profits[b]));
    order
}

pub(crate) fn quantile_in_order(profits: &[f64], sigma: &[f64], alpha: f64, order: &[usize]) -> f64 {
    let target = 1.0 - alpha;
    let mut cumulative = 0.0;
    for &w in order {
        cumulative += sigma[w];
        if cumulative >= target - QUANTILE_SLACK {
            return profits[w];
        }
    }
    profits[*order.last().expect("nonempty profits")]
}

/// The optimal VaR `xi` (the `1 - alpha` quantile of the profit
/// distribution, lower end on ties) and shortfalls `eta = max(0, xi - Pi)`.
pub fn optimal_cvar_auxiliaries(profits: &[f64], sigma: &[f64], alpha: f64) -> Result<(f64, Vec<f64>)> {
    check_len("sigma", profits.len(), sigma.len())?;
    if profits.is_empty() {
        return Err(Error::invalid("profits", "at least one scenario is required"));
    }
    let order = ascending_order(profits);
    let xi = quantile_in_order(profits, sigma, alpha, &order);
    let eta = profits.iter().map(|p| (xi - p).max(0.0)).collect();
    Ok((xi, eta))
}

/// CVaR at level `alpha` for the given weights.
pub fn cvar(profits: &[f64], sigma: &[f64], alpha: f64) -> Result<f64> {
    let (xi, eta) = optimal_cvar_auxiliaries(profits, sigma, alpha)?;
    let shortfall: f64 = eta.iter().zip(sigma).map(|(e, s)| e * s).sum();
    Ok(xi - shortfall / (1.0 - alpha))
}

/// Tail duals that fill mass `phi` in ascending-profit order, each capped
/// at `phi sigma / (1 - alpha)`.
pub(crate) fn greedy_duals(sigma: &[f64], risk: RiskConfig, order: &[usize], mu: &mut [f64]) {
    mu.iter_mut().for_each(|m| *m = 0.0);
    let mut remaining = risk.phi;
    for &w in order {
        if remaining <= 0.0 {
            break;
        }
        let take = risk.dual_cap(sigma[w]).min(remaining);
        mu[w] = take;
        remaining -= take;
    }
}

/// Risk-weighted conjectured derivative `sum_w ((1 - phi) sigma + mu) dPi`,
/// with `mu` the greedy tail duals at `profits`. `scratch` is resized as
/// needed and holds `mu` on return.
pub(crate) fn weighted_gradient(
    profits: &[f64],
    gradients: &[f64],
    sigma: &[f64],
    risk: RiskConfig,
    scratch: &mut Vec<f64>,
) -> f64 {
    let base: f64 = sigma
        .iter()
        .zip(gradients)
        .map(|(s, g)| (1.0 - risk.phi) * s * g)
        .sum();
    if risk.phi == 0.0 {
        return base;
    }
    scratch.resize(profits.len(), 0.0);
    let order = ascending_order(profits);
    greedy_duals(sigma, risk, &order, scratch);
    base + scratch.iter().zip(gradients).map(|(m, g)| m * g).sum::<f64>()
}
