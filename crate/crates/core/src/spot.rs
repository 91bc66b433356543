//! Stage-two equilibria.
//!
//! For fixed futures positions every scenario's spot market is a
//! conjectural-variations oligopoly among the conventional generators, with
//! RES output entering as a demand shift. The closed forms below are cheap;
//! [`best_response_oracle`] solves the same game by iterating first-order
//! conditions and exists to check them.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::market::{spot_demand_price_unchecked, MarketInstance, MarketModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpotOutcome {
    /// Per scenario.
    pub price_spot: Vec<f64>,
    /// `[generator][scenario]`, flat generator order.
    pub q_spot: Vec<Vec<f64>>,
    /// `[conventional][scenario]`
    pub tau: Vec<Vec<f64>>,
    /// Per scenario.
    pub phi_aux: Vec<f64>,
}

impl SpotOutcome {
    pub fn n_scenarios(&self) -> usize {
        self.price_spot.len()
    }

    /// Probability-weighted mean spot price.
    pub fn expected_price(&self, sigma: &[f64]) -> f64 {
        self.price_spot.iter().zip(sigma).map(|(p, s)| p * s).sum()
    }
}

/// Closed-form spot price of one scenario under the instance's model.
pub(crate) fn scenario_price(inst: &MarketInstance, w: usize, q_futures: &[f64]) -> f64 {
    let beta = inst.beta_spot(w);
    let mut acc = inst.gamma_hat(w);
    for (i, g) in inst.conventional().iter().enumerate() {
        let tau = inst.tau(i, w);
        let b = g.cost_b()[w];
        match inst.model() {
            MarketModel::Gm => {
                let qf = q_futures[i];
                acc += -beta * qf + beta * tau * (b + g.cost_c()[w] * qf);
            }
            MarketModel::Cfd => {
                let one_delta = 1.0 + inst.conduct().delta()[i];
                acc += beta * tau * b - beta * q_futures[i] * beta * one_delta * tau;
            }
            MarketModel::SpotOnly => acc += beta * tau * b,
        }
    }
    inst.phi_aux(w) * acc
}

/// Closed-form spot quantity of conventional generator `i` at the
/// equilibrium `price`.
pub(crate) fn conventional_quantity(
    inst: &MarketInstance,
    w: usize,
    i: usize,
    price: f64,
    q_futures_i: f64,
) -> f64 {
    let g = &inst.conventional()[i];
    let tau = inst.tau(i, w);
    let b = g.cost_b()[w];
    match inst.model() {
        MarketModel::Gm => tau * (price - b - g.cost_c()[w] * q_futures_i),
        MarketModel::Cfd => {
            let one_delta = 1.0 + inst.conduct().delta()[i];
            tau * (price - b + q_futures_i * inst.beta_spot(w) * one_delta)
        }
        MarketModel::SpotOnly => tau * (price - b),
    }
}

pub(crate) fn res_quantity(inst: &MarketInstance, w: usize, j: usize, q_futures_j: f64) -> f64 {
    let capacity = inst.res()[j].capacity()[w];
    match inst.model() {
        MarketModel::Gm | MarketModel::Cfd => capacity - q_futures_j,
        MarketModel::SpotOnly => capacity,
    }
}

fn closed_form(inst: &MarketInstance, q_futures: &[f64]) -> SpotOutcome {
    let n = inst.n_scenarios();
    let n_conv = inst.n_conventional();
    let mut price_spot = vec![0.0; n];
    let mut q_spot = vec![vec![0.0; n]; inst.n_generators()];
    for w in 0..n {
        let price = scenario_price(inst, w, q_futures);
        price_spot[w] = price;
        for i in 0..n_conv {
            q_spot[i][w] = conventional_quantity(inst, w, i, price, q_futures[i]);
        }
        for j in 0..inst.n_res() {
            q_spot[n_conv + j][w] = res_quantity(inst, w, j, q_futures[n_conv + j]);
        }
    }
    let tau = (0..n_conv)
        .map(|i| (0..n).map(|w| inst.tau(i, w)).collect())
        .collect();
    let phi_aux = (0..n).map(|w| inst.phi_aux(w)).collect();
    let out = SpotOutcome {
        price_spot,
        q_spot,
        tau,
        phi_aux,
    };
    warn_if_negative(inst, &out);
    out
}

fn warn_if_negative(inst: &MarketInstance, out: &SpotOutcome) {
    let neg_price = out.price_spot.iter().filter(|p| **p < 0.0).count();
    let neg_q = out.q_spot.iter().flatten().filter(|q| **q < 0.0).count();
    if neg_price + neg_q > 0 {
        log::warn!(
            "{} spot outcome has {neg_price} negative prices and {neg_q} negative quantities",
            inst.model()
        );
    }
}

/// Spot equilibrium with physically delivered futures.
pub fn gm_spot(instance: &MarketInstance, q_futures: &[f64]) -> Result<SpotOutcome> {
    instance.require_model(MarketModel::Gm)?;
    instance.check_futures(q_futures)?;
    Ok(closed_form(instance, q_futures))
}

/// Spot equilibrium with financially settled contracts for differences.
pub fn cfd_spot(instance: &MarketInstance, q_futures: &[f64]) -> Result<SpotOutcome> {
    instance.require_model(MarketModel::Cfd)?;
    instance.check_futures(q_futures)?;
    Ok(closed_form(instance, q_futures))
}

/// Spot equilibrium without a futures market.
pub fn spot_only(instance: &MarketInstance) -> Result<SpotOutcome> {
    instance.require_model(MarketModel::SpotOnly)?;
    Ok(closed_form(instance, &vec![0.0; instance.n_generators()]))
}

/// Dispatches on the instance's model. `q_futures` is ignored for
/// spot-only instances.
pub fn spot_equilibrium(instance: &MarketInstance, q_futures: &[f64]) -> Result<SpotOutcome> {
    match instance.model() {
        MarketModel::Gm => gm_spot(instance, q_futures),
        MarketModel::Cfd => cfd_spot(instance, q_futures),
        MarketModel::SpotOnly => spot_only(instance),
    }
}

/// Fixed point found by [`best_response_oracle`] for one scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleOutcome {
    pub price_spot: f64,
    /// Flat generator order; RES entries are their residual capacity.
    pub q_spot: Vec<f64>,
    pub iterations: usize,
    /// Conjectured first derivative of each conventional generator's spot
    /// profit at the fixed point.
    pub foc_residuals: Vec<f64>,
}

pub const ORACLE_MAX_ITERATIONS: usize = 100_000;
pub const ORACLE_TOLERANCE: f64 = 1e-10;

/// Solves one scenario's spot game by Gauss-Seidel best responses.
///
/// Each pass solves generator `i`'s first-order condition exactly against
/// the demand curve left by its rivals, conjecturing a price response of
/// `-beta (1 + delta_i)` to its own output. Starts from zero and stops once
/// the largest update is below `1e-10` and the remaining distance to the
/// fixed point, extrapolated from the observed contraction rate, is below
/// `1e-12 (1 + max |q|)`; or when updates reach rounding level.
pub fn best_response_oracle(
    instance: &MarketInstance,
    scenario: usize,
    q_futures: &[f64],
) -> Result<OracleOutcome> {
    instance.check_scenario(scenario)?;
    check_len("q_futures", instance.n_generators(), q_futures.len())?;
    let w = scenario;
    let model = instance.model();
    let n_conv = instance.n_conventional();
    let beta = instance.beta_spot(w);
    let zeros = vec![0.0; q_futures.len()];
    let q_f = if model.has_futures() { q_futures } else { &zeros[..] };

    let mut q = vec![0.0; n_conv];
    let mut last_change = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < ORACLE_MAX_ITERATIONS {
        iterations += 1;
        let mut change: f64 = 0.0;
        for i in 0..n_conv {
            let g = &instance.conventional()[i];
            let (b, c) = (g.cost_b()[w], g.cost_c()[w]);
            let one_delta = 1.0 + instance.conduct().delta()[i];
            // price with generator i's own spot output removed
            let residual = spot_demand_price_unchecked(instance, w, &q, q_f) + beta * q[i];
            let marginal = match model {
                MarketModel::Gm => residual - b - c * q_f[i],
                MarketModel::Cfd => residual - b + beta * one_delta * q_f[i],
                MarketModel::SpotOnly => residual - b,
            };
            let updated = marginal / (beta * (2.0 + instance.conduct().delta()[i]) + c);
            change = change.max((updated - q[i]).abs());
            q[i] = updated;
        }
        let scale = 1.0 + q.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let rate = (change / last_change).min(0.999_999);
        let remaining = change * rate / (1.0 - rate);
        last_change = change;
        if change <= 8.0 * f64::EPSILON * scale
            || (change < ORACLE_TOLERANCE && remaining < 1e-12 * scale)
        {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::OracleNonConvergence {
            iterations,
            last_change,
            last_iterate: q,
        });
    }

    let price = spot_demand_price_unchecked(instance, w, &q, q_f);
    let foc_residuals = (0..n_conv)
        .map(|i| spot_foc(instance, w, i, price, q[i], q_f[i]))
        .collect();
    let mut q_spot = q;
    for j in 0..instance.n_res() {
        q_spot.push(res_quantity(instance, w, j, q_f[n_conv + j]));
    }
    Ok(OracleOutcome {
        price_spot: price,
        q_spot,
        iterations,
        foc_residuals,
    })
}

/// Conjectured derivative of conventional generator `i`'s spot profit with
/// respect to its own spot output.
pub fn spot_foc(
    instance: &MarketInstance,
    scenario: usize,
    i: usize,
    price: f64,
    q_spot: f64,
    q_futures: f64,
) -> f64 {
    let w = scenario;
    let g = &instance.conventional()[i];
    let (b, c) = (g.cost_b()[w], g.cost_c()[w]);
    let slope = instance.beta_spot(w) * (1.0 + instance.conduct().delta()[i]);
    match instance.model() {
        MarketModel::Gm => price - slope * q_spot - b - c * (q_futures + q_spot),
        MarketModel::Cfd => price - slope * q_spot + slope * q_futures - b - c * q_spot,
        MarketModel::SpotOnly => price - slope * q_spot - b - c * q_spot,
    }
}
