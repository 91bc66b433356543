//! Multi-start equilibrium search.
//!
//! Each start runs a Gauss-Seidel diagonalisation: generators in turn move
//! to the root of their own risk-weighted conjectured derivative, holding
//! rivals fixed, found by bisection on the futures interval. Damping kicks
//! in when a start has not settled after a quarter of the sweep budget.
//! At a settled profile the multipliers are recovered in closed form and
//! the stacked complementarity program certifies the point.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradients::profits_and_gradients;
use crate::market::{FuturesDecision, MarketInstance, MarketModel};
use crate::risk::kkt::{kkt_residuals, KktPoint, KktReport};
use crate::risk::{ascending_order, cvar, objective_unchecked, quantile_in_order, weighted_gradient, RiskConfig};
use crate::spot::{spot_equilibrium, SpotOutcome};

/// Profits within this distance (in currency) of the VaR count as tied
/// when splitting tail mass.
const TIE_TOLERANCE: f64 = 1e-4;
/// Objectives closer than this are considered equal when ranking starts.
const TIE_BREAK: f64 = 1e-12;
const DAMPING: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Gauss-Seidel sweeps per start.
    pub max_outer_iterations: usize,
    /// Bisection steps per best response.
    pub inner_iterations: usize,
    /// Acceptance threshold on the scaled objective, equality residuals
    /// and sign violations.
    pub tolerance: f64,
    pub starts: usize,
    pub seed: u64,
    pub profit_scale: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_outer_iterations: 400,
            inner_iterations: 200,
            tolerance: 1e-6,
            starts: 10,
            seed: 0,
            profit_scale: 1e5,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.starts == 0 {
            return Err(Error::invalid("solver.starts", "at least one start is required"));
        }
        if self.max_outer_iterations == 0 || self.inner_iterations == 0 {
            return Err(Error::invalid("solver", "iteration limits must be positive"));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(Error::invalid("solver.tolerance", "must be positive"));
        }
        if !(self.profit_scale.is_finite() && self.profit_scale > 0.0) {
            return Err(Error::invalid("solver.profit_scale", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StartKind {
    /// Risk-neutral linear solve, clamped to bounds.
    Warm,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StartDiagnostics {
    pub index: usize,
    pub kind: StartKind,
    pub initial_q: Vec<f64>,
    pub final_q: Vec<f64>,
    pub outer_iterations: usize,
    pub settled: bool,
    pub objective: Option<f64>,
    pub max_equality: Option<f64>,
    pub max_sign_violation: Option<f64>,
    pub accepted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub starts_attempted: usize,
    pub starts_accepted: usize,
    pub accepted_start: usize,
    pub outer_iterations: usize,
    pub wall_time_secs: f64,
    pub starts: Vec<StartDiagnostics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSolution {
    pub model: MarketModel,
    pub risk: RiskConfig,
    pub decision: FuturesDecision,
    pub spot: SpotOutcome,
    pub xi: Vec<f64>,
    pub eta: Vec<Vec<f64>>,
    pub mu: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
    pub nu_min: Vec<f64>,
    pub nu_max: Vec<f64>,
    /// `[generator][scenario]`
    pub profits: Vec<Vec<f64>>,
    /// Scaled complementarity objective at the solution.
    pub objective_residual: f64,
    pub kkt: KktReport,
    pub solve_report: SolveReport,
}

impl EquilibriumSolution {
    pub fn point(&self) -> KktPoint {
        KktPoint {
            q_futures: self.decision.q_futures.clone(),
            xi: self.xi.clone(),
            eta: self.eta.clone(),
            mu: self.mu.clone(),
            theta: self.theta.clone(),
            nu_min: self.nu_min.clone(),
            nu_max: self.nu_max.clone(),
        }
    }

    pub fn expected_profit(&self, instance: &MarketInstance, k: usize) -> f64 {
        self.profits[k]
            .iter()
            .zip(instance.probabilities(k))
            .map(|(p, s)| p * s)
            .sum()
    }

    /// `CVaR_alpha` of generator `k`'s profit distribution.
    pub fn cvar(&self, instance: &MarketInstance, k: usize) -> f64 {
        cvar(&self.profits[k], instance.probabilities(k), self.risk.alpha())
            .expect("solution dimensions match the instance")
    }

    /// Generator `k`'s mean/CVaR objective at the solution.
    pub fn objective_value(&self, instance: &MarketInstance, k: usize) -> f64 {
        objective_unchecked(
            &self.profits[k],
            instance.probabilities(k),
            self.risk,
            self.xi[k],
            &self.eta[k],
        )
    }
}

struct Buffers {
    profits: Vec<f64>,
    grads: Vec<f64>,
    mu: Vec<f64>,
}

impl Buffers {
    fn new(n: usize) -> Self {
        Self {
            profits: vec![0.0; n],
            grads: vec![0.0; n],
            mu: vec![0.0; n],
        }
    }
}

fn own_derivative(
    inst: &MarketInstance,
    risk: RiskConfig,
    k: usize,
    q: &[f64],
    buf: &mut Buffers,
) -> f64 {
    profits_and_gradients(inst, k, q, &mut buf.profits, &mut buf.grads);
    weighted_gradient(&buf.profits, &buf.grads, inst.probabilities(k), risk, &mut buf.mu)
}

/// Root of generator `k`'s risk-weighted derivative on its interval, or the
/// bound it pushes against. Leaves `q[k]` at the returned value.
fn best_response(
    inst: &MarketInstance,
    risk: RiskConfig,
    k: usize,
    q: &mut [f64],
    max_steps: usize,
    buf: &mut Buffers,
) -> f64 {
    let b = inst.bounds(k);
    let mut eval = |x: f64, q: &mut [f64]| {
        q[k] = x;
        own_derivative(inst, risk, k, q, buf)
    };
    if b.width() == 0.0 || eval(b.min, q) <= 0.0 {
        q[k] = b.min;
        return b.min;
    }
    if eval(b.max, q) >= 0.0 {
        return b.max;
    }
    let (mut lo, mut hi) = (b.min, b.max);
    for _ in 0..max_steps {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if eval(mid, q) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let root = 0.5 * (lo + hi);
    q[k] = root;
    root
}

/// Gauss-Seidel sweeps from `q`. Returns the sweep count and whether the
/// largest move fell below the step tolerance.
fn diagonalize(
    inst: &MarketInstance,
    risk: RiskConfig,
    opts: &SolverOptions,
    q: &mut [f64],
) -> (usize, bool) {
    let k_all = inst.n_generators();
    let widest = (0..k_all).map(|k| inst.bounds(k).width()).fold(0.0, f64::max);
    let step_tol = 1e-10 * (1.0 + widest);
    let mut buf = Buffers::new(inst.n_scenarios());
    for sweep in 1..=opts.max_outer_iterations {
        let lambda = if sweep > opts.max_outer_iterations / 4 { DAMPING } else { 1.0 };
        let mut change: f64 = 0.0;
        for k in 0..k_all {
            let old = q[k];
            let br = best_response(inst, risk, k, q, opts.inner_iterations, &mut buf);
            let new = inst.bounds(k).clamp(old + lambda * (br - old));
            q[k] = new;
            change = change.max((new - old).abs());
        }
        if change <= step_tol {
            return (sweep, true);
        }
    }
    (opts.max_outer_iterations, false)
}

/// Multipliers at a fixed futures profile. Strict-tail scenarios carry the
/// full dual cap; the remaining tail mass is split over scenarios tied with
/// the VaR so as to zero (or sign-correct) the stationarity in `q`.
pub(crate) fn recover_multipliers(inst: &MarketInstance, risk: RiskConfig, q: &[f64]) -> KktPoint {
    let k_all = inst.n_generators();
    let n = inst.n_scenarios();
    let mut point = KktPoint {
        q_futures: q.to_vec(),
        xi: vec![0.0; k_all],
        eta: vec![vec![0.0; n]; k_all],
        mu: vec![vec![0.0; n]; k_all],
        theta: vec![vec![0.0; n]; k_all],
        nu_min: vec![0.0; k_all],
        nu_max: vec![0.0; k_all],
    };
    let mut profits = vec![0.0; n];
    let mut grads = vec![0.0; n];
    for k in 0..k_all {
        profits_and_gradients(inst, k, q, &mut profits, &mut grads);
        let sigma = inst.probabilities(k);
        let order = ascending_order(&profits);
        let xi = quantile_in_order(&profits, sigma, risk.alpha(), &order);
        let mu = &mut point.mu[k];

        let mut remaining = risk.phi();
        let mut tied = Vec::new();
        for &w in &order {
            if profits[w] < xi - TIE_TOLERANCE {
                mu[w] = risk.dual_cap(sigma[w]);
                remaining -= mu[w];
            } else if profits[w] <= xi + TIE_TOLERANCE {
                tied.push(w);
            }
        }
        let remaining = remaining.max(0.0);
        let base: f64 = (0..n)
            .map(|w| ((1.0 - risk.phi()) * sigma[w] + mu[w]) * grads[w])
            .sum();

        // extreme allocations of the remaining mass over the tie group
        let fill = |ids: &[usize]| -> Vec<f64> {
            let mut left = remaining;
            ids.iter()
                .map(|&w| {
                    let take = risk.dual_cap(sigma[w]).min(left);
                    left -= take;
                    take
                })
                .collect()
        };
        tied.sort_by(|&a, &b| grads[a].total_cmp(&grads[b]));
        let low = fill(&tied);
        let rev: Vec<usize> = tied.iter().rev().copied().collect();
        let high_rev = fill(&rev);
        let s_low: f64 = tied.iter().zip(&low).map(|(&w, m)| m * grads[w]).sum();
        let s_high: f64 = rev.iter().zip(&high_rev).map(|(&w, m)| m * grads[w]).sum();
        let lambda = if s_high - s_low > 0.0 {
            ((-base - s_low) / (s_high - s_low)).clamp(0.0, 1.0)
        } else {
            0.0
        };
        for (idx, &w) in tied.iter().enumerate() {
            let hi_share = high_rev[tied.len() - 1 - idx];
            mu[w] = (1.0 - lambda) * low[idx] + lambda * hi_share;
        }

        let stationarity: f64 = base + tied.iter().map(|&w| mu[w] * grads[w]).sum::<f64>();
        let b = inst.bounds(k);
        if q[k] <= b.min && stationarity < 0.0 {
            point.nu_min[k] = -stationarity;
        } else if q[k] >= b.max && stationarity > 0.0 {
            point.nu_max[k] = stationarity;
        }
        point.xi[k] = xi;
        for w in 0..n {
            point.eta[k][w] = (xi - profits[w]).max(0.0);
            point.theta[k][w] = risk.dual_cap(sigma[w]) - point.mu[k][w];
        }
    }
    point
}

/// Risk-neutral stationarity is affine in the futures profile; solve it
/// and clamp to the bounds. Falls back to the box midpoint if singular.
fn warm_start(inst: &MarketInstance) -> Vec<f64> {
    let k_all = inst.n_generators();
    let neutral = RiskConfig::risk_neutral();
    let mut buf = Buffers::new(inst.n_scenarios());
    let expected = |q: &[f64], k: usize, buf: &mut Buffers| own_derivative(inst, neutral, k, q, buf);
    let midpoint: Vec<f64> = (0..k_all)
        .map(|k| 0.5 * (inst.bounds(k).min + inst.bounds(k).max))
        .collect();
    if inst.model() == MarketModel::SpotOnly {
        return vec![0.0; k_all];
    }
    let zero = vec![0.0; k_all];
    let h = DVector::from_iterator(k_all, (0..k_all).map(|k| expected(&zero, k, &mut buf)));
    let step = 1000.0;
    let mut g = DMatrix::zeros(k_all, k_all);
    for m in 0..k_all {
        let mut e = zero.clone();
        e[m] = step;
        for k in 0..k_all {
            g[(k, m)] = (expected(&e, k, &mut buf) - h[k]) / step;
        }
    }
    match g.lu().solve(&(-h)) {
        Some(q) if q.iter().all(|v| v.is_finite()) => {
            (0..k_all).map(|k| inst.bounds(k).clamp(q[k])).collect()
        }
        _ => midpoint,
    }
}

fn start_points(inst: &MarketInstance, opts: &SolverOptions) -> Vec<(StartKind, Vec<f64>)> {
    let mut rng = ChaCha20Rng::seed_from_u64(opts.seed);
    let mut starts = vec![(StartKind::Warm, warm_start(inst))];
    for _ in 1..opts.starts {
        let q = (0..inst.n_generators())
            .map(|k| {
                let b = inst.bounds(k);
                if b.width() > 0.0 {
                    rng.random_range(b.min..=b.max)
                } else {
                    b.min
                }
            })
            .collect();
        starts.push((StartKind::Random, q));
    }
    starts
}

struct Candidate {
    point: KktPoint,
    report: KktReport,
}

fn run_start(
    inst: &MarketInstance,
    risk: RiskConfig,
    opts: &SolverOptions,
    index: usize,
    kind: StartKind,
    initial: Vec<f64>,
) -> Result<(StartDiagnostics, Option<Candidate>)> {
    let mut q = initial.clone();
    let (iterations, settled) = if inst.model() == MarketModel::SpotOnly {
        q.iter_mut().for_each(|v| *v = 0.0);
        (0, true)
    } else {
        diagonalize(inst, risk, opts, &mut q)
    };
    let mut diag = StartDiagnostics {
        index,
        kind,
        initial_q: initial,
        final_q: q.clone(),
        outer_iterations: iterations,
        settled,
        objective: None,
        max_equality: None,
        max_sign_violation: None,
        accepted: false,
    };
    if !settled {
        return Ok((diag, None));
    }
    let point = recover_multipliers(inst, risk, &q);
    let report = kkt_residuals(inst, risk, &point, opts.profit_scale)?;
    diag.objective = Some(report.total_complementarity);
    diag.max_equality = Some(report.max_equality);
    diag.max_sign_violation = Some(report.max_sign_violation);
    diag.accepted = report.within(opts.tolerance);
    let candidate = diag.accepted.then_some(Candidate { point, report });
    Ok((diag, candidate))
}

fn norm(q: &[f64]) -> f64 {
    q.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Finds an equilibrium of the futures stage (or evaluates the spot-only
/// market) and returns it with its residual report.
pub fn solve(
    instance: &MarketInstance,
    risk: RiskConfig,
    options: &SolverOptions,
) -> Result<EquilibriumSolution> {
    options.validate()?;
    let started = Instant::now();
    let starts = if instance.model() == MarketModel::SpotOnly {
        vec![(StartKind::Warm, vec![0.0; instance.n_generators()])]
    } else {
        start_points(instance, options)
    };
    let outcomes: Vec<(StartDiagnostics, Option<Candidate>)> = starts
        .into_par_iter()
        .enumerate()
        .map(|(index, (kind, q0))| run_start(instance, risk, options, index, kind, q0))
        .collect::<Result<_>>()?;

    let mut best: Option<(usize, &Candidate)> = None;
    for (index, (diag, cand)) in outcomes.iter().enumerate() {
        let Some(cand) = cand else { continue };
        log::debug!(
            "start {index} ({:?}) accepted: objective {:.3e}, q = {:?}",
            diag.kind,
            cand.report.total_complementarity,
            cand.point.q_futures
        );
        let better = match best {
            None => true,
            Some((_, incumbent)) => {
                let (a, b) = (
                    cand.report.total_complementarity,
                    incumbent.report.total_complementarity,
                );
                a < b - TIE_BREAK
                    || ((a - b).abs() <= TIE_BREAK
                        && norm(&cand.point.q_futures) < norm(&incumbent.point.q_futures))
            }
        };
        if better {
            best = Some((index, cand));
        }
    }
    let diagnostics: Vec<StartDiagnostics> = outcomes.iter().map(|(d, _)| d.clone()).collect();
    let Some((accepted_start, cand)) = best else {
        return Err(Error::NoConvergence(diagnostics));
    };

    let point = cand.point.clone();
    let report = cand.report.clone();
    let decision = FuturesDecision::new(instance, point.q_futures.clone())?;
    let spot = spot_equilibrium(instance, &point.q_futures)?;
    let n = instance.n_scenarios();
    let mut profits = vec![vec![0.0; n]; instance.n_generators()];
    let mut grads = vec![0.0; n];
    for (k, row) in profits.iter_mut().enumerate() {
        profits_and_gradients(instance, k, &point.q_futures, row, &mut grads);
    }
    let solve_report = SolveReport {
        starts_attempted: diagnostics.len(),
        starts_accepted: diagnostics.iter().filter(|d| d.accepted).count(),
        accepted_start,
        outer_iterations: diagnostics[accepted_start].outer_iterations,
        wall_time_secs: started.elapsed().as_secs_f64(),
        starts: diagnostics,
    };
    Ok(EquilibriumSolution {
        model: instance.model(),
        risk,
        decision,
        spot,
        xi: point.xi,
        eta: point.eta,
        mu: point.mu,
        theta: point.theta,
        nu_min: point.nu_min,
        nu_max: point.nu_max,
        profits,
        objective_residual: report.total_complementarity,
        kkt: report,
        solve_report,
    })
}
