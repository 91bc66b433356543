//! First-order system of each generator's mean/CVaR program.
//!
//! With multipliers `mu` on `eta + Pi - xi >= 0`, `theta` on `eta >= 0`
//! and `nu_min`, `nu_max` on the futures bounds, stationarity reads
//!
//! ```text
//! sum_w ((1 - phi) sigma_w + mu_w) dPi_w/dq = nu_max - nu_min
//! phi sigma_w / (1 - alpha) - mu_w - theta_w = 0
//! sum_w mu_w - phi = 0
//! ```
//!
//! plus four complementarity pairs. Currency-valued quantities are
//! reported divided by the profit scale.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};
use crate::gradients::profits_and_gradients;
use crate::market::MarketInstance;
use crate::risk::RiskConfig;

/// A candidate point in original units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KktPoint {
    pub q_futures: Vec<f64>,
    pub xi: Vec<f64>,
    /// `[generator][scenario]`
    pub eta: Vec<Vec<f64>>,
    pub mu: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
    pub nu_min: Vec<f64>,
    pub nu_max: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GeneratorResiduals {
    pub stationarity_q: f64,
    /// Largest absolute entry over scenarios.
    pub stationarity_eta: f64,
    pub stationarity_xi: f64,
    pub complementarity_mu: f64,
    pub complementarity_theta: f64,
    pub complementarity_nu_min: f64,
    pub complementarity_nu_max: f64,
    /// Largest violation of any sign or bound condition.
    pub sign_violation: f64,
}

impl GeneratorResiduals {
    pub fn max_equality(&self) -> f64 {
        self.stationarity_q
            .abs()
            .max(self.stationarity_eta)
            .max(self.stationarity_xi.abs())
    }

    pub fn complementarity(&self) -> f64 {
        self.complementarity_mu
            + self.complementarity_theta
            + self.complementarity_nu_min
            + self.complementarity_nu_max
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub generators: Vec<GeneratorResiduals>,
    pub max_equality: f64,
    pub total_complementarity: f64,
    pub max_sign_violation: f64,
    pub profit_scale: f64,
}

impl KktReport {
    /// True when every residual is within `tolerance` (scaled units).
    pub fn within(&self, tolerance: f64) -> bool {
        self.max_equality <= tolerance
            && self.total_complementarity <= tolerance
            && self.max_sign_violation <= tolerance
    }
}

pub(crate) fn check_point(instance: &MarketInstance, point: &KktPoint) -> Result<()> {
    let k = instance.n_generators();
    let n = instance.n_scenarios();
    check_len("q_futures", k, point.q_futures.len())?;
    check_len("xi", k, point.xi.len())?;
    check_len("nu_min", k, point.nu_min.len())?;
    check_len("nu_max", k, point.nu_max.len())?;
    for rows in [&point.eta, &point.mu, &point.theta] {
        check_len("dual rows", k, rows.len())?;
        for row in rows {
            check_len("dual scenarios", n, row.len())?;
        }
    }
    Ok(())
}

/// Evaluates every stationarity, complementarity and sign condition at
/// `point`; profits and derivatives are recomputed from its positions.
pub fn kkt_residuals(
    instance: &MarketInstance,
    risk: RiskConfig,
    point: &KktPoint,
    profit_scale: f64,
) -> Result<KktReport> {
    check_point(instance, point)?;
    let n = instance.n_scenarios();
    let mut profits = vec![0.0; n];
    let mut grads = vec![0.0; n];
    let mut generators = Vec::with_capacity(instance.n_generators());
    for k in 0..instance.n_generators() {
        profits_and_gradients(instance, k, &point.q_futures, &mut profits, &mut grads);
        generators.push(generator_residuals(
            instance,
            risk,
            point,
            k,
            &profits,
            &grads,
            profit_scale,
        ));
    }
    let max_equality = generators.iter().map(|g| g.max_equality()).fold(0.0, f64::max);
    let total_complementarity = generators.iter().map(|g| g.complementarity()).sum();
    let max_sign_violation = generators.iter().map(|g| g.sign_violation).fold(0.0, f64::max);
    Ok(KktReport {
        generators,
        max_equality,
        total_complementarity,
        max_sign_violation,
        profit_scale,
    })
}

pub(crate) fn generator_residuals(
    instance: &MarketInstance,
    risk: RiskConfig,
    point: &KktPoint,
    k: usize,
    profits: &[f64],
    grads: &[f64],
    scale: f64,
) -> GeneratorResiduals {
    let sigma = instance.probabilities(k);
    let bounds = instance.bounds(k);
    let (eta, mu, theta) = (&point.eta[k], &point.mu[k], &point.theta[k]);
    let q = point.q_futures[k];
    let xi = point.xi[k];

    let mut weighted = 0.0;
    let mut r_eta: f64 = 0.0;
    let mut comp_mu = 0.0;
    let mut comp_theta = 0.0;
    let mut violation: f64 = 0.0;
    for w in 0..profits.len() {
        weighted += ((1.0 - risk.phi()) * sigma[w] + mu[w]) * grads[w];
        r_eta = r_eta.max((risk.dual_cap(sigma[w]) - mu[w] - theta[w]).abs());
        let slack = (eta[w] + profits[w] - xi) / scale;
        comp_mu += mu[w] * slack;
        comp_theta += eta[w] / scale * theta[w];
        violation = violation
            .max(-slack)
            .max(-eta[w] / scale)
            .max(-mu[w])
            .max(-theta[w]);
    }
    let (nu_min, nu_max) = (point.nu_min[k], point.nu_max[k]);
    let lower_gap = q - bounds.min;
    let upper_gap = bounds.max - q;
    violation = violation
        .max(-nu_min / scale)
        .max(-nu_max / scale)
        .max(-lower_gap)
        .max(-upper_gap);
    GeneratorResiduals {
        stationarity_q: (weighted - nu_max + nu_min) / scale,
        stationarity_eta: r_eta,
        stationarity_xi: mu.iter().sum::<f64>() - risk.phi(),
        complementarity_mu: comp_mu,
        complementarity_theta: comp_theta,
        complementarity_nu_min: lower_gap * nu_min / scale,
        complementarity_nu_max: upper_gap * nu_max / scale,
        sign_violation: violation.max(0.0),
    }
}
