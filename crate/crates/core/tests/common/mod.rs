#![allow(dead_code)]

use elmarket_core::scenario::{generate, SPAIN_CONVENTIONAL_MAX};
use elmarket_core::{
    CalibrationConfig, ConductParams, ConductPreset, ConventionalGenerator, DemandCurves,
    FuturesBounds, MarketInstance, MarketModel, ResGenerator,
};
use proptest::prelude::*;

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

pub fn spain(model: MarketModel, preset: ConductPreset, res_mean: f64, n: usize, seed: u64) -> MarketInstance {
    let cfg = CalibrationConfig::spain(res_mean, n, seed);
    let set = generate(&cfg, 3, 1).unwrap();
    let conv: Vec<FuturesBounds> = SPAIN_CONVENTIONAL_MAX
        .iter()
        .map(|m| FuturesBounds::new(0.0, *m).unwrap())
        .collect();
    let res = [FuturesBounds::new(0.0, res_mean).unwrap()];
    set.instance(
        cfg.gamma_futures(),
        cfg.beta_futures(),
        &conv,
        &res,
        ConductParams::from_preset(preset, 3, 1),
        model,
    )
    .unwrap()
}

/// Raw draws for a random guarded instance with the calibrated parameter ranges.
#[derive(Clone, Debug)]
pub struct RawInstance {
    pub n_scenarios: usize,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub capacity: Vec<Vec<f64>>,
    pub delta: Vec<f64>,
    pub psi: Vec<f64>,
    pub bound_max: Vec<f64>,
    pub q_futures: Vec<f64>,
}

pub enum Conduct {
    Cournot,
    Perfect,
    Drawn,
}

impl RawInstance {
    pub fn build(&self, model: MarketModel, conduct: Conduct) -> MarketInstance {
        let n_conv = self.b.len();
        let n_res = self.capacity.len();
        let conv = (0..n_conv)
            .map(|i| {
                ConventionalGenerator::new(
                    vec![0.0; self.n_scenarios],
                    self.b[i].clone(),
                    self.c[i].clone(),
                    FuturesBounds::new(0.0, self.bound_max[i]).unwrap(),
                )
                .unwrap()
            })
            .collect();
        let res = (0..n_res)
            .map(|j| {
                ResGenerator::new(
                    self.capacity[j].clone(),
                    FuturesBounds::new(0.0, self.bound_max[n_conv + j]).unwrap(),
                )
                .unwrap()
            })
            .collect();
        let g_mean = self.gamma.iter().sum::<f64>() / self.gamma.len() as f64;
        let b_mean = self.beta.iter().sum::<f64>() / self.beta.len() as f64;
        let demand = DemandCurves::new(g_mean, b_mean, self.gamma.clone(), self.beta.clone()).unwrap();
        let conduct = match conduct {
            Conduct::Cournot => ConductParams::cournot(n_conv, n_res),
            Conduct::Perfect => ConductParams::perfect_competition(n_conv, n_res),
            Conduct::Drawn => ConductParams::new(self.delta.clone(), self.psi.clone()).unwrap(),
        };
        MarketInstance::new(conv, res, demand, conduct, model).unwrap()
    }
}

fn grid(members: usize, n: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(lo..hi, n), members)
}

/// I in 1..=4, J in 0..=2, up to 5 scenarios. Cost slopes stay positive so
/// the perfect-competition preset is guarded.
pub fn raw_instance() -> impl Strategy<Value = RawInstance> {
    (1usize..=4, 0usize..=2, 1usize..=5).prop_flat_map(|(i, j, n)| {
        let k = i + j;
        (
            grid(i, n, 25.0, 55.0),
            grid(i, n, 0.002, 0.025),
            prop::collection::vec(130.0..230.0f64, n),
            prop::collection::vec(0.0035..0.0065f64, n),
            grid(j, n, 0.0, 10_000.0),
            prop::collection::vec(-1.0..2.0f64, i),
            prop::collection::vec(-1.0 / (k.max(2) as f64 - 1.0)..1.0, k),
            prop::collection::vec(1000.0..8000.0f64, k),
            prop::collection::vec(0.0..1.0f64, k),
        )
            .prop_map(move |(b, c, gamma, beta, capacity, delta, psi, bound_max, u)| {
                let q_futures = u.iter().zip(&bound_max).map(|(u, m)| u * m).collect();
                RawInstance {
                    n_scenarios: n,
                    b,
                    c,
                    gamma,
                    beta,
                    capacity,
                    delta,
                    psi,
                    bound_max,
                    q_futures,
                }
            })
    })
}
