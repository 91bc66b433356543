//! Domain types of the two-stage game and the pure evaluation functions on
//! top of them: inverse demand curves and per-scenario profits.
//!
//! Generators are addressed either by [`GeneratorId`] or by a flat index
//! `k` in `0..n_generators()`, conventional generators first, RES after.
//! Every per-generator vector in the crate (futures quantities, conjectures,
//! probabilities) uses that flat order.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::spot::SpotOutcome;

/// Lower bound on `beta_spot * (1 + delta) + cost_c` below which the spot
/// equilibrium is treated as singular.
pub const TAU_FLOOR: f64 = 1e-9;

const PROBABILITY_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarketModel {
    /// Futures with physical delivery.
    Gm,
    /// Contracts for differences.
    Cfd,
    /// Spot market only.
    SpotOnly,
}

impl MarketModel {
    pub fn has_futures(self) -> bool {
        !matches!(self, MarketModel::SpotOnly)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MarketModel::Gm => "gm",
            MarketModel::Cfd => "cfd",
            MarketModel::SpotOnly => "spot-only",
        }
    }
}

impl fmt::Display for MarketModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MarketModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gm" => Ok(MarketModel::Gm),
            "cfd" => Ok(MarketModel::Cfd),
            "spot-only" => Ok(MarketModel::SpotOnly),
            other => Err(Error::invalid("model", format!("unknown model `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GeneratorId {
    Conventional(usize),
    Res(usize),
}

impl fmt::Display for GeneratorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeneratorId::Conventional(i) => write!(f, "conventional[{i}]"),
            GeneratorId::Res(j) => write!(f, "res[{j}]"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConductPreset {
    Cournot,
    #[serde(rename = "perfect")]
    PerfectCompetition,
}

impl ConductPreset {
    pub fn as_str(self) -> &'static str {
        match self {
            ConductPreset::Cournot => "cournot",
            ConductPreset::PerfectCompetition => "perfect",
        }
    }
}

impl FromStr for ConductPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cournot" => Ok(ConductPreset::Cournot),
            "perfect" | "perfect-competition" => Ok(ConductPreset::PerfectCompetition),
            other => Err(Error::invalid("conduct", format!("unknown preset `{other}`"))),
        }
    }
}

/// Conjectural variations.
///
/// `delta[i]` is conventional generator `i`'s conjectured aggregate rival
/// response in the spot market; `psi[k]` is generator `k`'s conjectured
/// response of each rival in the futures market.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConductParams {
    delta: Vec<f64>,
    psi: Vec<f64>,
}

impl ConductParams {
    pub fn new(delta: Vec<f64>, psi: Vec<f64>) -> Result<Self> {
        for (i, &d) in delta.iter().enumerate() {
            if !d.is_finite() || d < -1.0 {
                return Err(Error::invalid(
                    format!("conduct.delta[{i}]"),
                    format!("{d} is below -1"),
                ));
            }
        }
        let floor = psi_floor(psi.len());
        for (k, &p) in psi.iter().enumerate() {
            if !p.is_finite() || p < floor - 1e-12 {
                return Err(Error::invalid(
                    format!("conduct.psi[{k}]"),
                    format!("{p} is below -1/(I+J-1) = {floor}"),
                ));
            }
        }
        Ok(Self { delta, psi })
    }

    pub fn cournot(n_conventional: usize, n_res: usize) -> Self {
        Self {
            delta: vec![0.0; n_conventional],
            psi: vec![0.0; n_conventional + n_res],
        }
    }

    /// `delta = -1` and `psi = -1/(I+J-1)`. With a single generator there
    /// are no rivals and `psi` is set to zero.
    pub fn perfect_competition(n_conventional: usize, n_res: usize) -> Self {
        let n = n_conventional + n_res;
        let psi = if n > 1 { -1.0 / (n as f64 - 1.0) } else { 0.0 };
        Self {
            delta: vec![-1.0; n_conventional],
            psi: vec![psi; n],
        }
    }

    pub fn from_preset(preset: ConductPreset, n_conventional: usize, n_res: usize) -> Self {
        match preset {
            ConductPreset::Cournot => Self::cournot(n_conventional, n_res),
            ConductPreset::PerfectCompetition => Self::perfect_competition(n_conventional, n_res),
        }
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn psi(&self) -> &[f64] {
        &self.psi
    }
}

fn psi_floor(n_generators: usize) -> f64 {
    if n_generators > 1 {
        -1.0 / (n_generators as f64 - 1.0)
    } else {
        f64::NEG_INFINITY
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FuturesBounds {
    pub min: f64,
    pub max: f64,
}

impl FuturesBounds {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite()) || min < 0.0 || min > max {
            return Err(Error::invalid(
                "futures bounds",
                format!("need 0 <= min <= max, got [{min}, {max}]"),
            ));
        }
        Ok(Self { min, max })
    }

    pub fn clamp(&self, q: f64) -> f64 {
        q.clamp(self.min, self.max)
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }
}

/// Conventional generator with scenario-indexed quadratic cost
/// `a + b q + c q^2 / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConventionalGenerator {
    cost_a: Vec<f64>,
    cost_b: Vec<f64>,
    cost_c: Vec<f64>,
    bounds: FuturesBounds,
}

impl ConventionalGenerator {
    pub fn new(
        cost_a: Vec<f64>,
        cost_b: Vec<f64>,
        cost_c: Vec<f64>,
        bounds: FuturesBounds,
    ) -> Result<Self> {
        check_len("cost_b", cost_a.len(), cost_b.len())?;
        check_len("cost_c", cost_a.len(), cost_c.len())?;
        if let Some(a) = cost_a.iter().find(|a| !a.is_finite()) {
            return Err(Error::invalid("cost_a", format!("non-finite value {a}")));
        }
        if let Some(b) = cost_b.iter().find(|b| !(b.is_finite() && **b >= 0.0)) {
            return Err(Error::invalid("cost_b", format!("{b} is negative")));
        }
        if let Some(c) = cost_c.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
            return Err(Error::invalid("cost_c", format!("{c} is negative")));
        }
        Ok(Self {
            cost_a,
            cost_b,
            cost_c,
            bounds,
        })
    }

    /// Scenario-independent costs replicated over `n_scenarios`.
    pub fn constant(a: f64, b: f64, c: f64, n_scenarios: usize, bounds: FuturesBounds) -> Result<Self> {
        Self::new(
            vec![a; n_scenarios],
            vec![b; n_scenarios],
            vec![c; n_scenarios],
            bounds,
        )
    }

    pub fn cost_a(&self) -> &[f64] {
        &self.cost_a
    }
    pub fn cost_b(&self) -> &[f64] {
        &self.cost_b
    }
    pub fn cost_c(&self) -> &[f64] {
        &self.cost_c
    }
    pub fn bounds(&self) -> FuturesBounds {
        self.bounds
    }

    pub fn cost(&self, scenario: usize, quantity: f64) -> f64 {
        self.cost_a[scenario]
            + self.cost_b[scenario] * quantity
            + 0.5 * self.cost_c[scenario] * quantity * quantity
    }
}

/// Zero-marginal-cost generator with stochastic total production.
#[derive(Clone, Debug, PartialEq)]
pub struct ResGenerator {
    capacity: Vec<f64>,
    bounds: FuturesBounds,
}

impl ResGenerator {
    pub fn new(capacity: Vec<f64>, bounds: FuturesBounds) -> Result<Self> {
        if let Some(q) = capacity.iter().find(|q| !(q.is_finite() && **q >= 0.0)) {
            return Err(Error::invalid("res capacity", format!("{q} is negative")));
        }
        Ok(Self { capacity, bounds })
    }

    pub fn capacity(&self) -> &[f64] {
        &self.capacity
    }
    pub fn bounds(&self) -> FuturesBounds {
        self.bounds
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemandCurves {
    gamma_futures: f64,
    beta_futures: f64,
    gamma_spot: Vec<f64>,
    beta_spot: Vec<f64>,
}

impl DemandCurves {
    pub fn new(
        gamma_futures: f64,
        beta_futures: f64,
        gamma_spot: Vec<f64>,
        beta_spot: Vec<f64>,
    ) -> Result<Self> {
        check_len("beta_spot", gamma_spot.len(), beta_spot.len())?;
        if !(gamma_futures.is_finite() && gamma_futures > 0.0) {
            return Err(Error::invalid("gamma_futures", "must be positive"));
        }
        if !(beta_futures.is_finite() && beta_futures > 0.0) {
            return Err(Error::invalid("beta_futures", "must be positive"));
        }
        if let Some(g) = gamma_spot.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
            return Err(Error::invalid("gamma_spot", format!("{g} is not positive")));
        }
        if let Some(b) = beta_spot.iter().find(|b| !(b.is_finite() && **b > 0.0)) {
            return Err(Error::invalid("beta_spot", format!("{b} is not positive")));
        }
        Ok(Self {
            gamma_futures,
            beta_futures,
            gamma_spot,
            beta_spot,
        })
    }

    pub fn gamma_futures(&self) -> f64 {
        self.gamma_futures
    }
    pub fn beta_futures(&self) -> f64 {
        self.beta_futures
    }
    pub fn gamma_spot(&self) -> &[f64] {
        &self.gamma_spot
    }
    pub fn beta_spot(&self) -> &[f64] {
        &self.beta_spot
    }
}

/// Scenario constants of the closed-form spot equilibrium; they depend on
/// costs, demand and conduct but not on futures positions.
#[derive(Clone, Debug, PartialEq)]
struct SpotTerms {
    /// `tau[i][w] = 1 / (beta_w (1 + delta_i) + c_iw)`
    tau: Vec<Vec<f64>>,
    /// `phi[w] = 1 / (1 + beta_w sum_i tau_iw)`
    phi_aux: Vec<f64>,
    /// Demand intercept net of RES production.
    gamma_hat: Vec<f64>,
}

/// The deterministic skeleton of the game plus its scenario data.
#[derive(Clone, Debug, PartialEq)]
pub struct MarketInstance {
    conventional: Vec<ConventionalGenerator>,
    res: Vec<ResGenerator>,
    demand: DemandCurves,
    conduct: ConductParams,
    model: MarketModel,
    probabilities: Vec<Vec<f64>>,
    terms: SpotTerms,
}

impl MarketInstance {
    /// Builds an instance with equiprobable scenarios.
    pub fn new(
        conventional: Vec<ConventionalGenerator>,
        res: Vec<ResGenerator>,
        demand: DemandCurves,
        conduct: ConductParams,
        model: MarketModel,
    ) -> Result<Self> {
        if conventional.is_empty() {
            return Err(Error::invalid(
                "generators",
                "at least one conventional generator is required",
            ));
        }
        let n = demand.gamma_spot.len();
        if n == 0 {
            return Err(Error::invalid("scenarios", "at least one scenario is required"));
        }
        for g in &conventional {
            check_len("conventional cost scenarios", n, g.cost_a.len())?;
        }
        for g in &res {
            check_len("res capacity scenarios", n, g.capacity.len())?;
        }
        check_len("conduct.delta", conventional.len(), conduct.delta.len())?;
        check_len("conduct.psi", conventional.len() + res.len(), conduct.psi.len())?;

        let terms = spot_terms(&conventional, &res, &demand, &conduct)?;
        let k = conventional.len() + res.len();
        let probabilities = vec![vec![1.0 / n as f64; n]; k];
        Ok(Self {
            conventional,
            res,
            demand,
            conduct,
            model,
            probabilities,
            terms,
        })
    }

    /// Replaces the scenario probabilities (`[generator][scenario]`).
    pub fn with_probabilities(mut self, probabilities: Vec<Vec<f64>>) -> Result<Self> {
        check_len("probabilities", self.n_generators(), probabilities.len())?;
        for row in &probabilities {
            check_len("probabilities per generator", self.n_scenarios(), row.len())?;
            check_probabilities(row)?;
        }
        self.probabilities = probabilities;
        Ok(self)
    }

    pub fn with_model(&self, model: MarketModel) -> Self {
        let mut out = self.clone();
        out.model = model;
        out
    }

    pub fn with_conduct(&self, conduct: ConductParams) -> Result<Self> {
        check_len("conduct.delta", self.n_conventional(), conduct.delta.len())?;
        check_len("conduct.psi", self.n_generators(), conduct.psi.len())?;
        let terms = spot_terms(&self.conventional, &self.res, &self.demand, &conduct)?;
        let mut out = self.clone();
        out.conduct = conduct;
        out.terms = terms;
        Ok(out)
    }

    pub fn conventional(&self) -> &[ConventionalGenerator] {
        &self.conventional
    }
    pub fn res(&self) -> &[ResGenerator] {
        &self.res
    }
    pub fn demand(&self) -> &DemandCurves {
        &self.demand
    }
    pub fn conduct(&self) -> &ConductParams {
        &self.conduct
    }
    pub fn model(&self) -> MarketModel {
        self.model
    }

    pub fn n_conventional(&self) -> usize {
        self.conventional.len()
    }
    pub fn n_res(&self) -> usize {
        self.res.len()
    }
    pub fn n_generators(&self) -> usize {
        self.conventional.len() + self.res.len()
    }
    pub fn n_scenarios(&self) -> usize {
        self.demand.gamma_spot.len()
    }

    pub fn generator_id(&self, k: usize) -> GeneratorId {
        let n_conv = self.n_conventional();
        if k < n_conv {
            GeneratorId::Conventional(k)
        } else {
            GeneratorId::Res(k - n_conv)
        }
    }

    pub fn index_of(&self, id: GeneratorId) -> Result<usize> {
        match id {
            GeneratorId::Conventional(i) if i < self.n_conventional() => Ok(i),
            GeneratorId::Res(j) if j < self.n_res() => Ok(self.n_conventional() + j),
            _ => Err(Error::UnknownGenerator(id)),
        }
    }

    pub fn generator_ids(&self) -> impl Iterator<Item = GeneratorId> + '_ {
        (0..self.n_generators()).map(|k| self.generator_id(k))
    }

    pub fn bounds(&self, k: usize) -> FuturesBounds {
        let n_conv = self.n_conventional();
        if k < n_conv {
            self.conventional[k].bounds
        } else {
            self.res[k - n_conv].bounds
        }
    }

    pub fn probabilities(&self, k: usize) -> &[f64] {
        &self.probabilities[k]
    }

    pub fn tau(&self, i: usize, scenario: usize) -> f64 {
        self.terms.tau[i][scenario]
    }

    pub fn phi_aux(&self, scenario: usize) -> f64 {
        self.terms.phi_aux[scenario]
    }

    /// `gamma_spot - beta_spot * sum_j Q_j` for one scenario.
    pub fn gamma_hat(&self, scenario: usize) -> f64 {
        self.terms.gamma_hat[scenario]
    }

    pub fn beta_spot(&self, scenario: usize) -> f64 {
        self.demand.beta_spot[scenario]
    }

    pub fn check_scenario(&self, scenario: usize) -> Result<()> {
        if scenario < self.n_scenarios() {
            Ok(())
        } else {
            Err(Error::ScenarioIndex {
                index: scenario,
                count: self.n_scenarios(),
            })
        }
    }

    pub(crate) fn check_futures(&self, q_futures: &[f64]) -> Result<()> {
        check_len("q_futures", self.n_generators(), q_futures.len())
    }

    pub(crate) fn require_model(&self, expected: MarketModel) -> Result<()> {
        if self.model == expected {
            Ok(())
        } else {
            Err(Error::ModelMismatch {
                expected: expected.as_str(),
                found: self.model,
            })
        }
    }
}

fn spot_terms(
    conventional: &[ConventionalGenerator],
    res: &[ResGenerator],
    demand: &DemandCurves,
    conduct: &ConductParams,
) -> Result<SpotTerms> {
    let n = demand.gamma_spot.len();
    let mut tau = vec![vec![0.0; n]; conventional.len()];
    let mut phi_aux = vec![0.0; n];
    let mut gamma_hat = vec![0.0; n];
    for w in 0..n {
        let beta = demand.beta_spot[w];
        let mut tau_sum = 0.0;
        for (i, g) in conventional.iter().enumerate() {
            let denom = beta * (1.0 + conduct.delta[i]) + g.cost_c[w];
            if !(denom >= TAU_FLOOR) {
                return Err(Error::DegenerateConduct {
                    generator: i,
                    scenario: w,
                    value: denom,
                });
            }
            tau[i][w] = 1.0 / denom;
            tau_sum += tau[i][w];
        }
        phi_aux[w] = 1.0 / (1.0 + beta * tau_sum);
        let capacity: f64 = res.iter().map(|r| r.capacity[w]).sum();
        gamma_hat[w] = demand.gamma_spot[w] - beta * capacity;
    }
    Ok(SpotTerms {
        tau,
        phi_aux,
        gamma_hat,
    })
}

pub(crate) fn check_probabilities(sigma: &[f64]) -> Result<()> {
    if let Some(p) = sigma.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
        return Err(Error::invalid("probabilities", format!("{p} is negative")));
    }
    let sum: f64 = sigma.iter().sum();
    if (sum - 1.0).abs() > PROBABILITY_TOLERANCE {
        return Err(Error::ProbabilityMass { sum });
    }
    Ok(())
}

/// Stage-one variables: futures positions and the implied futures price.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FuturesDecision {
    pub q_futures: Vec<f64>,
    pub price_futures: f64,
}

impl FuturesDecision {
    /// Validates `q_futures` against the generators' bounds and prices it.
    pub fn new(instance: &MarketInstance, q_futures: Vec<f64>) -> Result<Self> {
        instance.check_futures(&q_futures)?;
        for (k, &q) in q_futures.iter().enumerate() {
            let b = instance.bounds(k);
            if !(q >= b.min && q <= b.max) {
                return Err(Error::invalid(
                    format!("q_futures[{k}]"),
                    format!("{q} outside [{}, {}]", b.min, b.max),
                ));
            }
        }
        let price_futures = futures_price_unchecked(instance, &q_futures);
        Ok(Self {
            q_futures,
            price_futures,
        })
    }

    /// All-zero position (the only admissible one without a futures stage).
    pub fn zero(instance: &MarketInstance) -> Self {
        let q_futures = vec![0.0; instance.n_generators()];
        let price_futures = futures_price_unchecked(instance, &q_futures);
        Self {
            q_futures,
            price_futures,
        }
    }
}

/// Futures inverse demand `gamma_F - beta_F * sum_k q_k`. Not clamped.
pub fn futures_price(instance: &MarketInstance, q_futures: &[f64]) -> Result<f64> {
    instance.check_futures(q_futures)?;
    Ok(futures_price_unchecked(instance, q_futures))
}

pub(crate) fn futures_price_unchecked(instance: &MarketInstance, q_futures: &[f64]) -> f64 {
    let total: f64 = q_futures.iter().sum();
    instance.demand.gamma_futures - instance.demand.beta_futures * total
}

/// Spot inverse demand seen by conventional generators, RES production
/// folded into the intercept.
///
/// Under GM the conventional futures deliveries enter the cleared volume;
/// under CFD and spot-only they are financial and are ignored.
pub fn spot_demand_price(
    instance: &MarketInstance,
    scenario: usize,
    q_spot: &[f64],
    q_futures: &[f64],
) -> Result<f64> {
    instance.check_scenario(scenario)?;
    check_len("q_spot (conventional)", instance.n_conventional(), q_spot.len())?;
    instance.check_futures(q_futures)?;
    Ok(spot_demand_price_unchecked(instance, scenario, q_spot, q_futures))
}

pub(crate) fn spot_demand_price_unchecked(
    instance: &MarketInstance,
    scenario: usize,
    q_spot: &[f64],
    q_futures: &[f64],
) -> f64 {
    let mut volume: f64 = q_spot.iter().sum();
    if instance.model == MarketModel::Gm {
        volume += q_futures[..instance.n_conventional()].iter().sum::<f64>();
    }
    instance.gamma_hat(scenario) - instance.beta_spot(scenario) * volume
}

/// Per-scenario profit of one generator given both stages' outcomes.
pub fn profit(
    instance: &MarketInstance,
    scenario: usize,
    decision: &FuturesDecision,
    spot: &SpotOutcome,
    id: GeneratorId,
) -> Result<f64> {
    instance.check_scenario(scenario)?;
    instance.check_futures(&decision.q_futures)?;
    let k = instance.index_of(id)?;
    check_len("spot scenarios", instance.n_scenarios(), spot.price_spot.len())?;
    check_len("spot generators", instance.n_generators(), spot.q_spot.len())?;
    Ok(generator_profit(
        instance,
        scenario,
        k,
        decision.price_futures,
        decision.q_futures[k],
        spot.price_spot[scenario],
        spot.q_spot[k][scenario],
    ))
}

/// Profit of generator `k` in one scenario; `q_spot` is only read for
/// conventional generators.
pub(crate) fn generator_profit(
    instance: &MarketInstance,
    scenario: usize,
    k: usize,
    price_futures: f64,
    q_futures: f64,
    price_spot: f64,
    q_spot: f64,
) -> f64 {
    let n_conv = instance.n_conventional();
    let model = instance.model;
    if k < n_conv {
        let g = &instance.conventional[k];
        match model {
            MarketModel::Gm => {
                price_futures * q_futures + price_spot * q_spot
                    - g.cost(scenario, q_futures + q_spot)
            }
            MarketModel::Cfd => {
                (price_futures - price_spot) * q_futures + price_spot * q_spot
                    - g.cost(scenario, q_spot)
            }
            MarketModel::SpotOnly => price_spot * q_spot - g.cost(scenario, q_spot),
        }
    } else {
        let capacity = instance.res[k - n_conv].capacity[scenario];
        match model {
            // Physical delivery of q_futures, the rest Q - q_futures at spot.
            MarketModel::Gm => (price_futures - price_spot) * q_futures + price_spot * capacity,
            // Financial settlement; the whole production clears at spot.
            MarketModel::Cfd => (price_futures - price_spot) * q_futures + price_spot * capacity,
            MarketModel::SpotOnly => price_spot * capacity,
        }
    }
}
