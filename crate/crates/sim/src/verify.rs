//! Self-checks on a configured market: the closed-form spot stage against
//! best responses, analytic derivatives against finite differences, the
//! zero-futures bridge between models, and certification of a solve.

use elmarket_core::gradients::profit_gradient;
use elmarket_core::market::{futures_price, profit};
use elmarket_core::risk::{assemble_nlp, solve, KktPoint};
use elmarket_core::spot::{best_response_oracle, spot_equilibrium};
use elmarket_core::{FuturesDecision, MarketInstance, MarketModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::config::Config;
use crate::error::Result;
use crate::study::build_instance;

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// Largest observed deviation, in the unit of `tolerance`.
    pub worst: f64,
    pub tolerance: f64,
    pub cases: usize,
}

const POSITIONS: usize = 20;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn random_positions(inst: &MarketInstance, rng: &mut ChaCha20Rng) -> Vec<f64> {
    (0..inst.n_generators())
        .map(|k| {
            let b = inst.bounds(k);
            b.min + rng.random::<f64>() * b.width()
        })
        .collect()
}

fn check(name: &'static str, worst: f64, tolerance: f64, cases: usize) -> Check {
    Check { name, passed: worst.is_finite() && worst <= tolerance, worst, tolerance, cases }
}

fn spot_oracle(inst: &MarketInstance, positions: &[Vec<f64>]) -> Result<Check> {
    let mut worst: f64 = 0.0;
    for q in positions {
        let closed = spot_equilibrium(inst, q)?;
        for w in 0..inst.n_scenarios() {
            let o = best_response_oracle(inst, w, q)?;
            worst = worst.max(rel(o.price_spot, closed.price_spot[w]));
            for (k, qs) in o.q_spot.iter().enumerate() {
                worst = worst.max(rel(*qs, closed.q_spot[k][w]));
            }
        }
    }
    Ok(check("spot closed form vs best responses", worst, 1e-8, positions.len()))
}

/// Profit in scenario `w` after generator `k` moves by `t`, rivals
/// following its futures conjecture. RES moves leave the spot stage to
/// the RES generator itself.
fn conjectured_profit(inst: &MarketInstance, q: &[f64], k: usize, t: f64, w: usize) -> Result<f64> {
    let psi = inst.conduct().psi()[k];
    let along: Vec<f64> = q.iter().enumerate().map(|(m, v)| if m == k { v + t } else { v + psi * t }).collect();
    let spot_q: Vec<f64> = if k >= inst.n_conventional() {
        q.iter().enumerate().map(|(m, v)| if m == k { v + t } else { *v }).collect()
    } else {
        along.clone()
    };
    let spot = spot_equilibrium(inst, &spot_q)?;
    let decision = FuturesDecision { q_futures: spot_q, price_futures: futures_price(inst, &along)? };
    Ok(profit(inst, w, &decision, &spot, inst.generator_id(k))?)
}

fn gradients(inst: &MarketInstance, positions: &[Vec<f64>]) -> Result<Check> {
    let mut worst: f64 = 0.0;
    for q in positions {
        let h = 1e-4 * (1.0 + q.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        for k in 0..inst.n_generators() {
            let g = profit_gradient(inst, q, inst.generator_id(k))?;
            for (w, gw) in g.iter().enumerate() {
                let fd = (conjectured_profit(inst, q, k, h, w)? - conjectured_profit(inst, q, k, -h, w)?) / (2.0 * h);
                worst = worst.max(rel(*gw, fd));
            }
        }
    }
    Ok(check("profit derivatives vs central differences", worst, 1e-5, positions.len()))
}

fn zero_futures_bridge(inst: &MarketInstance) -> Result<Check> {
    let zero = vec![0.0; inst.n_generators()];
    let profits = |model: MarketModel| -> Result<Vec<f64>> {
        let m = inst.with_model(model);
        let spot = spot_equilibrium(&m, &zero)?;
        let d = FuturesDecision::new(&m, zero.clone())?;
        let mut out = Vec::new();
        for id in m.generator_ids() {
            for w in 0..m.n_scenarios() {
                out.push(profit(&m, w, &d, &spot, id)?);
            }
        }
        Ok(out)
    };
    let base = profits(MarketModel::SpotOnly)?;
    let mut worst: f64 = 0.0;
    for model in [MarketModel::Gm, MarketModel::Cfd] {
        for (a, b) in profits(model)?.iter().zip(&base) {
            worst = worst.max(rel(*a, *b));
        }
    }
    Ok(check("zero-futures profits agree across models", worst, 1e-12, 1))
}

fn nonnegative_objective(cfg: &Config, inst: &MarketInstance, positions: &[Vec<f64>], rng: &mut ChaCha20Rng) -> Result<Check> {
    let risk = cfg.risk_config();
    let nlp = assemble_nlp(inst, risk, cfg.solver.profit_scale)?;
    let k_all = inst.n_generators();
    let n = inst.n_scenarios();
    let mut worst: f64 = 0.0;
    for q in positions {
        let mut point = KktPoint {
            q_futures: q.clone(),
            xi: vec![0.0; k_all],
            eta: vec![vec![0.0; n]; k_all],
            mu: vec![vec![0.0; n]; k_all],
            theta: vec![vec![0.0; n]; k_all],
            nu_min: (0..k_all).map(|_| rng.random::<f64>()).collect(),
            nu_max: (0..k_all).map(|_| rng.random::<f64>()).collect(),
        };
        let spot = spot_equilibrium(inst, q)?;
        let d = FuturesDecision { q_futures: q.clone(), price_futures: futures_price(inst, q)? };
        for k in 0..k_all {
            let p: Vec<f64> = (0..n).map(|w| profit(inst, w, &d, &spot, inst.generator_id(k))).collect::<elmarket_core::Result<_>>()?;
            let xi = p.iter().sum::<f64>() / n as f64;
            point.xi[k] = xi;
            for w in 0..n {
                let cap = risk.dual_cap(inst.probabilities(k)[w]);
                point.eta[k][w] = if xi > p[w] { xi - p[w] + 1e-9 } else { 0.0 } + rng.random::<f64>();
                point.mu[k][w] = cap * rng.random::<f64>();
                point.theta[k][w] = cap - point.mu[k][w];
            }
        }
        let obj = nlp.objective(&nlp.pack(&point)?)?;
        worst = worst.max(-obj);
    }
    Ok(check("complementarity objective is nonnegative", worst, 0.0, positions.len()))
}

fn certified_solve(cfg: &Config, inst: &MarketInstance) -> Vec<Check> {
    let risk = cfg.risk_config();
    let sol = match solve(inst, risk, &cfg.solver) {
        Ok(s) => s,
        Err(_) => return vec![check("solve is certified", f64::INFINITY, cfg.solver.tolerance, 1)],
    };
    let kkt = &sol.kkt;
    let residual = kkt.max_equality.max(kkt.total_complementarity).max(kkt.max_sign_violation);
    let mass = (0..inst.n_generators())
        .map(|k| (sol.mu[k].iter().sum::<f64>() - risk.phi()).abs())
        .fold(0.0, f64::max);
    let mut out = vec![
        check("solve is certified", residual, cfg.solver.tolerance, 1),
        check("dual mass equals phi", mass, 1e-9, 1),
    ];
    if risk.phi() == 0.0 {
        let dual = sol.mu.iter().chain(&sol.theta).flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        out.push(check("risk-neutral duals vanish", dual, 0.0, 1));
    }
    out
}

/// Runs every check on the instance built from `cfg`; random positions
/// are drawn from a stream seeded by the scenario seed.
pub fn run_checks(cfg: &Config) -> Result<Vec<Check>> {
    let inst = build_instance(cfg)?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.scenarios.seed ^ 0x7665_7269_6679);
    let positions: Vec<Vec<f64>> = (0..POSITIONS).map(|_| random_positions(&inst, &mut rng)).collect();
    let mut checks = vec![spot_oracle(&inst, &positions)?, zero_futures_bridge(&inst)?];
    if inst.model().has_futures() {
        checks.push(gradients(&inst, &positions)?);
        checks.push(nonnegative_objective(cfg, &inst, &positions, &mut rng)?);
    }
    checks.extend(certified_solve(cfg, &inst));
    Ok(checks)
}
