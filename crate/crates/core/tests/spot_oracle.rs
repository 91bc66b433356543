mod common;

use common::{raw_instance, rel, Conduct};
use elmarket_core::market::spot_demand_price;
use elmarket_core::spot::{best_response_oracle, gm_spot, spot_equilibrium, spot_foc, spot_only};
use elmarket_core::{ConductParams, ConventionalGenerator, DemandCurves, Error, FuturesBounds, MarketInstance, MarketModel};
use elmarket_core::market::{futures_price, profit};
use elmarket_core::{FuturesDecision, GeneratorId};
use proptest::prelude::*;

const MODELS: [MarketModel; 3] = [MarketModel::Gm, MarketModel::Cfd, MarketModel::SpotOnly];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn closed_forms_match_best_response(raw in raw_instance()) {
        for model in MODELS {
            let inst = raw.build(model, Conduct::Drawn);
            let spot = spot_equilibrium(&inst, &raw.q_futures).unwrap();
            for w in 0..inst.n_scenarios() {
                let o = best_response_oracle(&inst, w, &raw.q_futures).unwrap();
                prop_assert!(rel(o.price_spot, spot.price_spot[w]) < 1e-8,
                    "{model} price {} vs {}", o.price_spot, spot.price_spot[w]);
                for k in 0..inst.n_generators() {
                    prop_assert!(rel(o.q_spot[k], spot.q_spot[k][w]) < 1e-8,
                        "{model} q[{k}] {} vs {}", o.q_spot[k], spot.q_spot[k][w]);
                }
                prop_assert!(o.foc_residuals.iter().all(|r| r.abs() < 1e-6));
            }
        }
    }

    #[test]
    fn closed_forms_solve_first_order_conditions(raw in raw_instance()) {
        for model in MODELS {
            let inst = raw.build(model, Conduct::Drawn);
            let spot = spot_equilibrium(&inst, &raw.q_futures).unwrap();
            let qf: Vec<f64> = if model.has_futures() { raw.q_futures.clone() } else { vec![0.0; raw.q_futures.len()] };
            for w in 0..inst.n_scenarios() {
                let bound = 1e-9 * (1.0 + inst.gamma_hat(w).abs());
                for i in 0..inst.n_conventional() {
                    let r = spot_foc(&inst, w, i, spot.price_spot[w], spot.q_spot[i][w], qf[i]);
                    prop_assert!(r.abs() < bound, "{model}: residual {r}");
                }
                let q_conv: Vec<f64> = (0..inst.n_conventional()).map(|i| spot.q_spot[i][w]).collect();
                let p = spot_demand_price(&inst, w, &q_conv, &qf).unwrap();
                prop_assert!(rel(p, spot.price_spot[w]) < 1e-9);
                for i in 0..inst.n_conventional() {
                    prop_assert!(spot.tau[i][w].is_finite() && spot.tau[i][w] > 0.0);
                }
                prop_assert!(spot.phi_aux[w] > 0.0 && spot.phi_aux[w] <= 1.0);
            }
        }
    }

    #[test]
    fn zero_futures_bridge(raw in raw_instance()) {
        let zero = vec![0.0; raw.q_futures.len()];
        let gm = spot_equilibrium(&raw.build(MarketModel::Gm, Conduct::Drawn), &zero).unwrap();
        let cfd = spot_equilibrium(&raw.build(MarketModel::Cfd, Conduct::Drawn), &zero).unwrap();
        let so = spot_only(&raw.build(MarketModel::SpotOnly, Conduct::Drawn)).unwrap();
        for w in 0..so.n_scenarios() {
            prop_assert!(rel(gm.price_spot[w], so.price_spot[w]) < 1e-12);
            prop_assert!(rel(cfd.price_spot[w], so.price_spot[w]) < 1e-12);
            for k in 0..so.q_spot.len() {
                prop_assert!(rel(gm.q_spot[k][w], so.q_spot[k][w]) < 1e-12);
                prop_assert!(rel(cfd.q_spot[k][w], so.q_spot[k][w]) < 1e-12);
            }
        }
    }

    /// One generator's spot output moves by h and its rivals respond in
    /// aggregate by delta h; its spot profit changes only at second order.
    #[test]
    fn spot_profit_is_stationary_under_conjecture(raw in raw_instance()) {
        for model in MODELS {
            let inst = raw.build(model, Conduct::Drawn);
            let qf: Vec<f64> = if model.has_futures() { raw.q_futures.clone() } else { vec![0.0; raw.q_futures.len()] };
            let spot = spot_equilibrium(&inst, &qf).unwrap();
            let pf = futures_price(&inst, &qf).unwrap();
            let n_conv = inst.n_conventional();
            for w in 0..inst.n_scenarios() {
                let q: Vec<f64> = (0..n_conv).map(|i| spot.q_spot[i][w]).collect();
                let scale = 1.0 + q.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let h = 1e-5 * scale;
                for i in 0..n_conv {
                    let delta = inst.conduct().delta()[i];
                    let decision = FuturesDecision { q_futures: qf.clone(), price_futures: pf };
                    let value = |t: f64| {
                        let mut moved = spot.clone();
                        moved.price_spot[w] -= inst.beta_spot(w) * (1.0 + delta) * t;
                        moved.q_spot[i][w] += t;
                        profit(&inst, w, &decision, &moved, GeneratorId::Conventional(i)).unwrap()
                    };
                    let d = (value(h) - value(-h)) / (2.0 * h);
                    let second = (value(h) - 2.0 * value(0.0) + value(-h)).abs().max(1e-9 * scale);
                    prop_assert!(d.abs() * h <= 10.0 * second + 1e-6 * scale,
                        "{model}: first-order change {} vs second {}", d * h, second);
                }
            }
        }
    }
}

#[test]
fn oracle_rejects_singular_conduct_before_iterating() {
    let g = ConventionalGenerator::constant(0.0, 10.0, 0.0, 1, FuturesBounds::new(0.0, 1.0).unwrap()).unwrap();
    let demand = DemandCurves::new(100.0, 1.0, vec![100.0], vec![1.0]).unwrap();
    let conduct = ConductParams::new(vec![-1.0], vec![0.0]).unwrap();
    let err = MarketInstance::new(vec![g], vec![], demand, conduct, MarketModel::Gm).unwrap_err();
    assert!(matches!(err, Error::DegenerateConduct { .. }));
}

#[test]
fn gm_at_zero_futures_equals_spot_only_on_spain_data() {
    let inst = common::spain(MarketModel::Gm, elmarket_core::ConductPreset::Cournot, 5000.0, 50, 1);
    let gm = gm_spot(&inst, &[0.0; 4]).unwrap();
    let so = spot_only(&inst.with_model(MarketModel::SpotOnly)).unwrap();
    assert_eq!(gm.price_spot, so.price_spot);
    assert_eq!(gm.q_spot, so.q_spot);
}
