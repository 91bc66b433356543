//! All generators' first-order systems stacked into one nonlinear program:
//! minimise the sum of complementarity products subject to the
//! stationarity equations and the sign conditions. A zero objective at a
//! feasible point is an equilibrium.

use crate::error::{check_len, Error, Result};
use crate::gradients::profits_and_gradients;
use crate::market::{MarketInstance, MarketModel};
use crate::risk::kkt::{generator_residuals, kkt_residuals, KktPoint};
use crate::risk::RiskConfig;

/// Offsets into the flat variable vector
/// `[q | xi | eta | mu | theta | nu_min | nu_max]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VariableLayout {
    pub n_generators: usize,
    pub n_scenarios: usize,
}

impl VariableLayout {
    pub fn q(&self) -> usize {
        0
    }
    pub fn xi(&self) -> usize {
        self.n_generators
    }
    pub fn eta(&self) -> usize {
        2 * self.n_generators
    }
    pub fn mu(&self) -> usize {
        self.eta() + self.n_generators * self.n_scenarios
    }
    pub fn theta(&self) -> usize {
        self.mu() + self.n_generators * self.n_scenarios
    }
    pub fn nu_min(&self) -> usize {
        self.theta() + self.n_generators * self.n_scenarios
    }
    pub fn nu_max(&self) -> usize {
        self.nu_min() + self.n_generators
    }
    pub fn len(&self) -> usize {
        self.nu_max() + self.n_generators
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_equalities(&self) -> usize {
        self.n_generators * (self.n_scenarios + 2)
    }
}

/// Scaled complementarity program. Currency-valued variables (`xi`, `eta`,
/// `nu`) are stored divided by the profit scale; `q`, `mu`, `theta` are not.
#[derive(Clone, Copy, Debug)]
pub struct ComplementarityNlp<'a> {
    instance: &'a MarketInstance,
    risk: RiskConfig,
    profit_scale: f64,
    layout: VariableLayout,
}

pub fn assemble_nlp(
    instance: &MarketInstance,
    risk: RiskConfig,
    profit_scale: f64,
) -> Result<ComplementarityNlp<'_>> {
    if instance.model() == MarketModel::SpotOnly {
        return Err(Error::invalid(
            "model",
            "spot-only instances have no futures stage",
        ));
    }
    if !(profit_scale.is_finite() && profit_scale > 0.0) {
        return Err(Error::invalid("profit_scale", "must be positive"));
    }
    Ok(ComplementarityNlp::new_unchecked(instance, risk, profit_scale))
}

impl<'a> ComplementarityNlp<'a> {
    pub(crate) fn new_unchecked(instance: &'a MarketInstance, risk: RiskConfig, profit_scale: f64) -> Self {
        Self {
            instance,
            risk,
            profit_scale,
            layout: VariableLayout {
                n_generators: instance.n_generators(),
                n_scenarios: instance.n_scenarios(),
            },
        }
    }

    pub fn layout(&self) -> VariableLayout {
        self.layout
    }

    pub fn n_variables(&self) -> usize {
        self.layout.len()
    }

    pub fn profit_scale(&self) -> f64 {
        self.profit_scale
    }

    pub fn pack(&self, point: &KktPoint) -> Result<Vec<f64>> {
        crate::risk::kkt::check_point(self.instance, point)?;
        let s = self.profit_scale;
        let mut x = Vec::with_capacity(self.n_variables());
        x.extend_from_slice(&point.q_futures);
        x.extend(point.xi.iter().map(|v| v / s));
        x.extend(point.eta.iter().flatten().map(|v| v / s));
        x.extend(point.mu.iter().flatten());
        x.extend(point.theta.iter().flatten());
        x.extend(point.nu_min.iter().map(|v| v / s));
        x.extend(point.nu_max.iter().map(|v| v / s));
        Ok(x)
    }

    pub fn unpack(&self, x: &[f64]) -> Result<KktPoint> {
        check_len("NLP variables", self.n_variables(), x.len())?;
        let l = self.layout;
        let (k, n, s) = (l.n_generators, l.n_scenarios, self.profit_scale);
        let rows = |start: usize, scaled: bool| -> Vec<Vec<f64>> {
            (0..k)
                .map(|g| {
                    x[start + g * n..start + (g + 1) * n]
                        .iter()
                        .map(|v| if scaled { v * s } else { *v })
                        .collect()
                })
                .collect()
        };
        Ok(KktPoint {
            q_futures: x[l.q()..l.q() + k].to_vec(),
            xi: x[l.xi()..l.xi() + k].iter().map(|v| v * s).collect(),
            eta: rows(l.eta(), true),
            mu: rows(l.mu(), false),
            theta: rows(l.theta(), false),
            nu_min: x[l.nu_min()..l.nu_min() + k].iter().map(|v| v * s).collect(),
            nu_max: x[l.nu_max()..l.nu_max() + k].iter().map(|v| v * s).collect(),
        })
    }

    /// Sum of complementarity products, scaled.
    pub fn objective(&self, x: &[f64]) -> Result<f64> {
        let point = self.unpack(x)?;
        Ok(kkt_residuals(self.instance, self.risk, &point, self.profit_scale)?.total_complementarity)
    }

    /// Stationarity in `q` for every generator, then in `eta` for every
    /// generator and scenario, then in `xi`.
    pub fn equality_residuals(&self, x: &[f64]) -> Result<Vec<f64>> {
        let point = self.unpack(x)?;
        let (k_all, n) = (self.layout.n_generators, self.layout.n_scenarios);
        let mut profits = vec![0.0; n];
        let mut grads = vec![0.0; n];
        let mut st_q = Vec::with_capacity(k_all);
        let mut st_eta = Vec::with_capacity(k_all * n);
        let mut st_xi = Vec::with_capacity(k_all);
        for k in 0..k_all {
            profits_and_gradients(self.instance, k, &point.q_futures, &mut profits, &mut grads);
            let r = generator_residuals(
                self.instance,
                self.risk,
                &point,
                k,
                &profits,
                &grads,
                self.profit_scale,
            );
            st_q.push(r.stationarity_q);
            st_xi.push(r.stationarity_xi);
            let sigma = self.instance.probabilities(k);
            for w in 0..n {
                st_eta.push(self.risk.dual_cap(sigma[w]) - point.mu[k][w] - point.theta[k][w]);
            }
        }
        st_q.extend(st_eta);
        st_q.extend(st_xi);
        Ok(st_q)
    }

    /// Every sign and bound condition as a margin that must be `>= 0`:
    /// `eta`, `mu`, `theta`, `eta + Pi - xi`, `nu_min`, `nu_max`,
    /// `q - q_min`, `q_max - q`.
    pub fn inequality_margins(&self, x: &[f64]) -> Result<Vec<f64>> {
        let point = self.unpack(x)?;
        let (k_all, n, s) = (self.layout.n_generators, self.layout.n_scenarios, self.profit_scale);
        let mut out = Vec::with_capacity(4 * k_all * n + 4 * k_all);
        out.extend(point.eta.iter().flatten().map(|v| v / s));
        out.extend(point.mu.iter().flatten());
        out.extend(point.theta.iter().flatten());
        let mut profits = vec![0.0; n];
        let mut grads = vec![0.0; n];
        for k in 0..k_all {
            profits_and_gradients(self.instance, k, &point.q_futures, &mut profits, &mut grads);
            out.extend((0..n).map(|w| (point.eta[k][w] + profits[w] - point.xi[k]) / s));
        }
        out.extend(point.nu_min.iter().map(|v| v / s));
        out.extend(point.nu_max.iter().map(|v| v / s));
        for k in 0..k_all {
            out.push(point.q_futures[k] - self.instance.bounds(k).min);
        }
        for k in 0..k_all {
            out.push(self.instance.bounds(k).max - point.q_futures[k]);
        }
        Ok(out)
    }
}
