//! Reproducible scenario sets.
//!
//! Every stochastic parameter is an independent normal draw, resampled when
//! it falls below its floor. Draws come from a ChaCha20 stream seeded with
//! the config seed, in a fixed order: `cost_b` (generator-major,
//! scenario-minor), then `cost_c`, the spot intercept, the spot slope, and
//! finally RES capacity. Because RES capacity is drawn last, configs that
//! differ only in the RES mean share every other draw.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::market::{
    check_probabilities, ConductParams, ConventionalGenerator, DemandCurves, FuturesBounds,
    MarketInstance, MarketModel, ResGenerator,
};

pub const MAX_RETRIES: usize = 100;
const POSITIVE_FLOOR: f64 = 1e-6;

/// Normal family: one mean per member, with either a coefficient of
/// variation or explicit standard deviations (which take precedence).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamFamily {
    pub mean: Vec<f64>,
    #[serde(default)]
    pub cv: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sd: Option<Vec<f64>>,
}

impl ParamFamily {
    pub fn with_cv(mean: Vec<f64>, cv: f64) -> Self {
        Self { mean, cv, sd: None }
    }

    pub fn with_sd(mean: Vec<f64>, cv: f64, sd: Vec<f64>) -> Self {
        Self {
            mean,
            cv,
            sd: Some(sd),
        }
    }

    pub fn sigma(&self, member: usize) -> f64 {
        match &self.sd {
            Some(sd) => sd[member],
            None => self.mean[member] * self.cv,
        }
    }

    fn validate(&self, name: &'static str, allow_zero_mean: bool) -> Result<()> {
        if !(self.cv.is_finite() && self.cv >= 0.0) {
            return Err(Error::invalid(format!("{name}.cv"), format!("{} is negative", self.cv)));
        }
        if let Some(sd) = &self.sd {
            check_len("explicit standard deviations", self.mean.len(), sd.len())?;
            if let Some(s) = sd.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
                return Err(Error::invalid(format!("{name}.sd"), format!("{s} is negative")));
            }
        }
        for &m in &self.mean {
            let ok = if allow_zero_mean { m >= 0.0 } else { m > 0.0 };
            if !(m.is_finite() && ok) {
                return Err(Error::invalid(format!("{name}.mean"), format!("{m} out of range")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    /// Fixed cost per conventional generator; not drawn.
    pub cost_a: Vec<f64>,
    pub cost_b: ParamFamily,
    pub cost_c: ParamFamily,
    /// Single-member family; its mean is also the futures intercept.
    pub gamma: ParamFamily,
    /// Single-member family; its mean is also the futures slope.
    pub beta: ParamFamily,
    /// One member per RES generator.
    pub res_capacity: ParamFamily,
    pub scenario_count: usize,
    pub seed: u64,
}

/// Scenario counts used for expected-profit and CVaR studies.
pub const RISK_NEUTRAL_SCENARIOS: usize = 150;
pub const RISK_AVERSE_SCENARIOS: usize = 200;

/// Futures upper bounds of the three calibrated conventional generators.
pub const SPAIN_CONVENTIONAL_MAX: [f64; 3] = [6000.0, 7000.0, 5000.0];

impl CalibrationConfig {
    /// Spanish-market calibration: three conventional generators and one
    /// RES generator with mean capacity `res_mean`.
    pub fn spain(res_mean: f64, scenario_count: usize, seed: u64) -> Self {
        Self {
            cost_a: vec![0.0; 3],
            cost_b: ParamFamily::with_sd(vec![37.0, 40.0, 43.0], 0.09, vec![3.5, 4.55, 5.59]),
            cost_c: ParamFamily::with_sd(
                vec![0.013, 0.003, 0.019],
                0.05,
                vec![0.000125, 0.0002, 0.000195],
            ),
            gamma: ParamFamily::with_sd(vec![180.0], 0.10, vec![18.0]),
            beta: ParamFamily::with_sd(vec![0.005], 0.10, vec![0.0005]),
            res_capacity: ParamFamily::with_sd(vec![res_mean], 0.20, vec![1000.0]),
            scenario_count,
            seed,
        }
    }

    pub fn n_conventional(&self) -> usize {
        self.cost_b.mean.len()
    }

    pub fn n_res(&self) -> usize {
        self.res_capacity.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenario_count == 0 {
            return Err(Error::invalid("scenario_count", "must be at least 1"));
        }
        let n_conv = self.n_conventional();
        check_len("cost_a", n_conv, self.cost_a.len())?;
        check_len("cost_c means", n_conv, self.cost_c.mean.len())?;
        check_len("gamma means", 1, self.gamma.mean.len())?;
        check_len("beta means", 1, self.beta.mean.len())?;
        self.cost_b.validate("cost_b", false)?;
        self.cost_c.validate("cost_c", false)?;
        self.gamma.validate("gamma", false)?;
        self.beta.validate("beta", false)?;
        self.res_capacity.validate("res_capacity", true)?;
        Ok(())
    }

    pub fn gamma_futures(&self) -> f64 {
        self.gamma.mean[0]
    }

    pub fn beta_futures(&self) -> f64 {
        self.beta.mean[0]
    }
}

/// Scenario draws, indexed `[member][scenario]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    pub cost_a: Vec<Vec<f64>>,
    pub cost_b: Vec<Vec<f64>>,
    pub cost_c: Vec<Vec<f64>>,
    pub gamma_spot: Vec<f64>,
    pub beta_spot: Vec<f64>,
    pub capacity: Vec<Vec<f64>>,
    /// `[generator][scenario]`, conventional generators first.
    pub sigma: Vec<Vec<f64>>,
}

struct Sampler {
    rng: ChaCha20Rng,
}

impl Sampler {
    fn draw(&mut self, mean: f64, sd: f64, floor: f64, family: &'static str) -> Result<f64> {
        for _ in 0..=MAX_RETRIES {
            let z: f64 = self.rng.sample(StandardNormal);
            let x = mean + sd * z;
            if x >= floor {
                return Ok(x);
            }
        }
        Err(Error::TruncationExhausted {
            family,
            retries: MAX_RETRIES,
        })
    }

    fn family(
        &mut self,
        p: &ParamFamily,
        n: usize,
        floor: f64,
        name: &'static str,
    ) -> Result<Vec<Vec<f64>>> {
        (0..p.mean.len())
            .map(|m| {
                (0..n)
                    .map(|_| self.draw(p.mean[m], p.sigma(m), floor, name))
                    .collect()
            })
            .collect()
    }
}

/// Draws a scenario set for `n_conventional` + `n_res` generators.
pub fn generate(config: &CalibrationConfig, n_conventional: usize, n_res: usize) -> Result<ScenarioSet> {
    config.validate()?;
    check_len("conventional generators", config.n_conventional(), n_conventional)?;
    check_len("RES generators", config.n_res(), n_res)?;
    let n = config.scenario_count;
    let mut s = Sampler {
        rng: ChaCha20Rng::seed_from_u64(config.seed),
    };
    let cost_b = s.family(&config.cost_b, n, 0.0, "cost_b")?;
    let cost_c = s.family(&config.cost_c, n, POSITIVE_FLOOR, "cost_c")?;
    let gamma_spot = s.family(&config.gamma, n, POSITIVE_FLOOR, "gamma")?.remove(0);
    let beta_spot = s.family(&config.beta, n, POSITIVE_FLOOR, "beta")?.remove(0);
    let capacity = s.family(&config.res_capacity, n, 0.0, "res_capacity")?;
    let cost_a = config.cost_a.iter().map(|a| vec![*a; n]).collect();
    let sigma = vec![vec![1.0 / n as f64; n]; n_conventional + n_res];
    Ok(ScenarioSet {
        cost_a,
        cost_b,
        cost_c,
        gamma_spot,
        beta_spot,
        capacity,
        sigma,
    })
}

/// One config per RES level, everything else (seed included) unchanged.
pub fn sweep_capacity(config: &CalibrationConfig, levels: &[f64]) -> Result<Vec<CalibrationConfig>> {
    if levels.is_empty() {
        return Err(Error::invalid("sweep levels", "at least one level is required"));
    }
    if let Some(l) = levels.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return Err(Error::invalid("sweep levels", format!("{l} is negative")));
    }
    if levels.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("sweep levels", "must be nondecreasing"));
    }
    Ok(levels
        .iter()
        .map(|&level| {
            let mut c = config.clone();
            c.res_capacity.mean.iter_mut().for_each(|m| *m = level);
            c
        })
        .collect())
}

impl ScenarioSet {
    pub fn n_scenarios(&self) -> usize {
        self.gamma_spot.len()
    }

    pub fn with_probabilities(mut self, sigma: Vec<Vec<f64>>) -> Result<Self> {
        check_len("probabilities", self.sigma.len(), sigma.len())?;
        for row in &sigma {
            check_len("probabilities per generator", self.n_scenarios(), row.len())?;
            check_probabilities(row)?;
        }
        self.sigma = sigma;
        Ok(self)
    }

    /// Assembles a market instance. Futures demand is the expected spot
    /// demand of the calibration.
    pub fn instance(
        &self,
        gamma_futures: f64,
        beta_futures: f64,
        conventional_bounds: &[FuturesBounds],
        res_bounds: &[FuturesBounds],
        conduct: ConductParams,
        model: MarketModel,
    ) -> Result<MarketInstance> {
        check_len("conventional bounds", self.cost_b.len(), conventional_bounds.len())?;
        check_len("RES bounds", self.capacity.len(), res_bounds.len())?;
        let conventional = (0..self.cost_b.len())
            .map(|i| {
                ConventionalGenerator::new(
                    self.cost_a[i].clone(),
                    self.cost_b[i].clone(),
                    self.cost_c[i].clone(),
                    conventional_bounds[i],
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let res = (0..self.capacity.len())
            .map(|j| ResGenerator::new(self.capacity[j].clone(), res_bounds[j]))
            .collect::<Result<Vec<_>>>()?;
        let demand = DemandCurves::new(
            gamma_futures,
            beta_futures,
            self.gamma_spot.clone(),
            self.beta_spot.clone(),
        )?;
        MarketInstance::new(conventional, res, demand, conduct, model)?
            .with_probabilities(self.sigma.clone())
    }
}
