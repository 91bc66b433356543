//! First-stage derivatives.
//!
//! Generator `k` moving its futures position by one unit conjectures that
//! every rival moves by `psi[k]`. The spot equilibrium follows through the
//! closed forms of [`crate::spot`]; RES futures positions only shift their
//! own residual spot sales and never the spot price.

use crate::error::{Error, Result};
use crate::market::{futures_price_unchecked, generator_profit, GeneratorId, MarketInstance, MarketModel};
use crate::spot::{conventional_quantity, res_quantity, scenario_price};

/// Conjectured derivatives with respect to each generator's own futures
/// position.
#[derive(Clone, Debug, PartialEq)]
pub struct FuturesPartials {
    /// `dP^F/dq_k`, per generator.
    pub d_price_futures: Vec<f64>,
    /// `dP^S_w/dq_k`, `[generator][scenario]`.
    pub d_price_spot: Vec<Vec<f64>>,
    /// `dq^S_kw/dq_k`, `[generator][scenario]`.
    pub d_q_spot: Vec<Vec<f64>>,
}

pub(crate) fn d_price_futures(inst: &MarketInstance, k: usize) -> f64 {
    let n = inst.n_generators() as f64;
    -inst.demand().beta_futures() * (1.0 + (n - 1.0) * inst.conduct().psi()[k])
}

/// `(dP^S/dq_k, dq^S_k/dq_k)` in scenario `w`.
pub(crate) fn spot_partials(inst: &MarketInstance, w: usize, k: usize) -> (f64, f64) {
    let n_conv = inst.n_conventional();
    if k >= n_conv {
        return (0.0, -1.0);
    }
    let i = k;
    let beta = inst.beta_spot(w);
    let phi = inst.phi_aux(w);
    let psi = inst.conduct().psi()[i];
    let delta = inst.conduct().delta();
    let tau_i = inst.tau(i, w);
    match inst.model() {
        MarketModel::Gm => {
            let c = |m: usize| inst.conventional()[m].cost_c()[w];
            let rivals: f64 = (0..n_conv).filter(|&m| m != i).map(|m| c(m) * inst.tau(m, w)).sum();
            let dp = phi
                * (-beta * (1.0 + (n_conv as f64 - 1.0) * psi)
                    + beta * c(i) * tau_i
                    + beta * psi * rivals);
            (dp, tau_i * (dp - c(i)))
        }
        MarketModel::Cfd => {
            let rivals: f64 = (0..n_conv)
                .filter(|&m| m != i)
                .map(|m| (1.0 + delta[m]) * inst.tau(m, w))
                .sum();
            let dp = phi * (-beta * beta * (1.0 + delta[i]) * tau_i - beta * beta * psi * rivals);
            (dp, tau_i * dp + tau_i * beta * (1.0 + delta[i]))
        }
        MarketModel::SpotOnly => (0.0, 0.0),
    }
}

fn partials(inst: &MarketInstance, q_futures: &[f64]) -> Result<FuturesPartials> {
    inst.check_futures(q_futures)?;
    let k_all = inst.n_generators();
    let n = inst.n_scenarios();
    let mut d_price_spot = vec![vec![0.0; n]; k_all];
    let mut d_q_spot = vec![vec![0.0; n]; k_all];
    for k in 0..k_all {
        for w in 0..n {
            let (dp, dq) = spot_partials(inst, w, k);
            d_price_spot[k][w] = dp;
            d_q_spot[k][w] = dq;
        }
    }
    Ok(FuturesPartials {
        d_price_futures: (0..k_all).map(|k| d_price_futures(inst, k)).collect(),
        d_price_spot,
        d_q_spot,
    })
}

pub fn gm_partials(instance: &MarketInstance, q_futures: &[f64]) -> Result<FuturesPartials> {
    instance.require_model(MarketModel::Gm)?;
    partials(instance, q_futures)
}

pub fn cfd_partials(instance: &MarketInstance, q_futures: &[f64]) -> Result<FuturesPartials> {
    instance.require_model(MarketModel::Cfd)?;
    partials(instance, q_futures)
}

fn require_futures(inst: &MarketInstance) -> Result<()> {
    if inst.model().has_futures() {
        Ok(())
    } else {
        Err(Error::invalid(
            "model",
            "spot-only instances have no futures stage",
        ))
    }
}

/// Per-scenario state of one generator at a futures profile.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ScenarioState {
    pub price_spot: f64,
    pub q_spot: f64,
}

pub(crate) fn scenario_state(inst: &MarketInstance, w: usize, k: usize, q_futures: &[f64]) -> ScenarioState {
    let n_conv = inst.n_conventional();
    let price_spot = scenario_price(inst, w, q_futures);
    let q_spot = if k < n_conv {
        conventional_quantity(inst, w, k, price_spot, q_futures[k])
    } else {
        res_quantity(inst, w, k - n_conv, q_futures[k])
    };
    ScenarioState { price_spot, q_spot }
}

/// Own-position derivative of generator `k`'s profit in scenario `w`.
pub(crate) fn scenario_gradient(
    inst: &MarketInstance,
    w: usize,
    k: usize,
    q_futures_k: f64,
    price_futures: f64,
    d_price_futures: f64,
    state: ScenarioState,
) -> f64 {
    let ScenarioState { price_spot: ps, q_spot: qs } = state;
    let pf = price_futures;
    let dpf = d_price_futures;
    let qf = q_futures_k;
    if inst.model() == MarketModel::SpotOnly {
        return 0.0;
    }
    if k >= inst.n_conventional() {
        return dpf * qf + pf - ps;
    }
    let (dps, dqs) = spot_partials(inst, w, k);
    let g = &inst.conventional()[k];
    let (b, c) = (g.cost_b()[w], g.cost_c()[w]);
    match inst.model() {
        MarketModel::Gm => {
            dpf * qf + pf + dps * qs + ps * dqs - (b + c * (qf + qs)) * (1.0 + dqs)
        }
        MarketModel::Cfd => {
            (dpf - dps) * qf + pf - ps + dps * qs + ps * dqs - (b + c * qs) * dqs
        }
        MarketModel::SpotOnly => 0.0,
    }
}

/// Profit and own-position derivative of generator `k` in every scenario,
/// written into the two output slices.
pub(crate) fn profits_and_gradients(
    inst: &MarketInstance,
    k: usize,
    q_futures: &[f64],
    profits: &mut [f64],
    gradients: &mut [f64],
) {
    let pf = futures_price_unchecked(inst, q_futures);
    let dpf = d_price_futures(inst, k);
    for w in 0..inst.n_scenarios() {
        let state = scenario_state(inst, w, k, q_futures);
        profits[w] = generator_profit(inst, w, k, pf, q_futures[k], state.price_spot, state.q_spot);
        gradients[w] = scenario_gradient(inst, w, k, q_futures[k], pf, dpf, state);
    }
}

/// `dPi_kw/dq_k` for every scenario.
pub fn profit_gradient(
    instance: &MarketInstance,
    q_futures: &[f64],
    id: GeneratorId,
) -> Result<Vec<f64>> {
    require_futures(instance)?;
    instance.check_futures(q_futures)?;
    let k = instance.index_of(id)?;
    let n = instance.n_scenarios();
    let mut profits = vec![0.0; n];
    let mut gradients = vec![0.0; n];
    profits_and_gradients(instance, k, q_futures, &mut profits, &mut gradients);
    Ok(gradients)
}
