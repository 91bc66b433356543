//! Single solves and parameter sweeps, with their CSV and JSON outputs.
//!
//! Every file carries the config hash and scenario seed. CSV numbers go
//! through [`sig6`], so identical inputs reproduce identical cells.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use elmarket_core::risk::{solve, KktReport, SolveReport, StartDiagnostics};
use elmarket_core::scenario::generate;
use elmarket_core::spot::spot_only;
use elmarket_core::{EquilibriumSolution, MarketInstance, MarketModel};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::Config;
use crate::error::{Result, SimError};
use crate::format::{opt6, sig6};

/// Outcome columns shared by every CSV.
pub const HEADLINE_COLUMNS: [&str; 11] = [
    "price_futures",
    "expected_price_spot",
    "conv_futures",
    "conv_spot",
    "res_futures",
    "res_spot",
    "conv_profit",
    "res_profit",
    "conv_cvar",
    "res_cvar",
    "spot_only_price_spot",
];

/// Aggregates in market units. Sums run over generators of one kind;
/// spot expectations use the first generator's scenario probabilities.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Headline {
    /// Absent without a futures market.
    pub price_futures: Option<f64>,
    pub expected_price_spot: f64,
    pub conv_futures: f64,
    pub conv_spot: f64,
    pub res_futures: f64,
    pub res_spot: f64,
    pub conv_profit: f64,
    pub res_profit: f64,
    pub conv_cvar: f64,
    pub res_cvar: f64,
    /// Expected spot price of the same scenarios with no futures stage.
    pub spot_only_price_spot: f64,
}

impl Headline {
    pub fn compute(instance: &MarketInstance, sol: &EquilibriumSolution) -> Result<Self> {
        let sigma = instance.probabilities(0);
        let n_conv = instance.n_conventional();
        let kinds = |range: std::ops::Range<usize>, f: &dyn Fn(usize) -> f64| range.map(f).sum::<f64>();
        let expected_q = |k: usize| -> f64 {
            sol.spot.q_spot[k].iter().zip(sigma).map(|(q, s)| q * s).sum()
        };
        let all = instance.n_generators();
        let no_futures = spot_only(&instance.with_model(MarketModel::SpotOnly))?;
        Ok(Self {
            price_futures: instance.model().has_futures().then_some(sol.decision.price_futures),
            expected_price_spot: sol.spot.expected_price(sigma),
            conv_futures: kinds(0..n_conv, &|k| sol.decision.q_futures[k]),
            conv_spot: kinds(0..n_conv, &expected_q),
            res_futures: kinds(n_conv..all, &|k| sol.decision.q_futures[k]),
            res_spot: kinds(n_conv..all, &expected_q),
            conv_profit: kinds(0..n_conv, &|k| sol.expected_profit(instance, k)),
            res_profit: kinds(n_conv..all, &|k| sol.expected_profit(instance, k)),
            conv_cvar: kinds(0..n_conv, &|k| sol.cvar(instance, k)),
            res_cvar: kinds(n_conv..all, &|k| sol.cvar(instance, k)),
            spot_only_price_spot: no_futures.expected_price(sigma),
        })
    }

    pub fn values(&self) -> [Option<f64>; 11] {
        [
            self.price_futures,
            Some(self.expected_price_spot),
            Some(self.conv_futures),
            Some(self.conv_spot),
            Some(self.res_futures),
            Some(self.res_spot),
            Some(self.conv_profit),
            Some(self.res_profit),
            Some(self.conv_cvar),
            Some(self.res_cvar),
            Some(self.spot_only_price_spot),
        ]
    }
}

/// Scenario draw and market instance of a config.
pub fn build_instance(cfg: &Config) -> Result<MarketInstance> {
    let cal = cfg.calibration();
    let set = generate(&cal, cfg.n_conventional(), cfg.n_res())?;
    Ok(cfg.instance(&set)?)
}

pub struct Solved {
    pub instance: MarketInstance,
    pub solution: EquilibriumSolution,
    pub headline: Headline,
}

/// A point that failed to solve, with whatever diagnostics exist.
pub struct Failed {
    pub message: String,
    pub starts: Vec<StartDiagnostics>,
}

pub fn solve_config(cfg: &Config) -> Result<std::result::Result<Solved, Failed>> {
    let instance = build_instance(cfg)?;
    match solve(&instance, cfg.risk_config(), &cfg.solver) {
        Ok(solution) => {
            let headline = Headline::compute(&instance, &solution)?;
            Ok(Ok(Solved { instance, solution, headline }))
        }
        Err(elmarket_core::Error::NoConvergence(starts)) => Ok(Err(Failed {
            message: format!("no start certified after {} attempts", starts.len()),
            starts,
        })),
        Err(e) => Err(e.into()),
    }
}

fn res_level(cfg: &Config) -> f64 {
    cfg.generators.res.iter().map(|r| r.capacity.mean).sum()
}

/// Identifies the run in every output row.
const RUN_COLUMNS: [&str; 9] = [
    "command", "model", "conduct", "phi", "alpha", "res_level", "scenarios", "seed", "config_hash",
];

fn run_cells(command: &str, cfg: &Config, hash: &str) -> Vec<String> {
    vec![
        command.into(),
        cfg.model.to_string(),
        cfg.conduct.preset.to_string(),
        sig6(cfg.risk.phi),
        sig6(cfg.risk.alpha),
        sig6(res_level(cfg)),
        cfg.scenario_count(cfg.risk.phi > 0.0).to_string(),
        cfg.scenarios.seed.to_string(),
        hash.into(),
    ]
}

fn output_path(cfg: &Config, suffix: &str) -> PathBuf {
    cfg.output.dir.join(format!("{}_{suffix}", cfg.output.prefix))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config_hash: &'a str,
    seed: u64,
    files: Vec<String>,
    points: usize,
    failed: usize,
}

fn write_manifest(cfg: &Config, command: &str, hash: &str, files: &[PathBuf], points: usize, failed: usize) -> Result<PathBuf> {
    let path = output_path(cfg, &format!("{}_manifest.json", command.replace('-', "_")));
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config_hash: hash,
        seed: cfg.scenarios.seed,
        files: files.iter().map(|f| f.display().to_string()).collect(),
        points,
        failed,
    };
    write_json(&path, &manifest)?;
    Ok(path)
}

#[derive(Serialize)]
struct SolveDocument<'a> {
    config_hash: &'a str,
    seed: u64,
    config: &'a Config,
    headline: &'a Headline,
    residuals: &'a KktReport,
    solution: &'a EquilibriumSolution,
}

#[derive(Serialize)]
struct DiagnosticsDocument<'a> {
    config_hash: &'a str,
    seed: u64,
    config: &'a Config,
    message: &'a str,
    starts: &'a [StartDiagnostics],
}

/// Files written by a command.
#[derive(Clone, Debug)]
pub struct Written {
    pub files: Vec<PathBuf>,
}

/// Solves one configuration and writes `<prefix>_solve.json` and
/// `<prefix>_solve.csv`, or `<prefix>_diagnostics.json` on failure.
pub fn run_single(cfg: &Config) -> Result<Written> {
    let hash = cfg.hash();
    fs::create_dir_all(&cfg.output.dir)?;
    match solve_config(cfg)? {
        Ok(s) => {
            let json = output_path(cfg, "solve.json");
            write_json(
                &json,
                &SolveDocument {
                    config_hash: &hash,
                    seed: cfg.scenarios.seed,
                    config: cfg,
                    headline: &s.headline,
                    residuals: &s.solution.kkt,
                    solution: &s.solution,
                },
            )?;
            let csv_path = output_path(cfg, "solve.csv");
            let mut w = csv::Writer::from_path(&csv_path)?;
            w.write_record(RUN_COLUMNS.iter().chain(&HEADLINE_COLUMNS))?;
            let mut row = run_cells("solve", cfg, &hash);
            row.extend(s.headline.values().into_iter().map(opt6));
            w.write_record(&row)?;
            w.flush()?;
            let mut files = vec![json, csv_path];
            files.push(write_manifest(cfg, "solve", &hash, &files, 1, 0)?);
            Ok(Written { files })
        }
        Err(f) => {
            let path = output_path(cfg, "diagnostics.json");
            write_json(
                &path,
                &DiagnosticsDocument {
                    config_hash: &hash,
                    seed: cfg.scenarios.seed,
                    config: cfg,
                    message: &f.message,
                    starts: &f.starts,
                },
            )?;
            write_manifest(cfg, "solve", &hash, std::slice::from_ref(&path), 1, 1)?;
            Err(SimError::NonConvergence(path.display().to_string()))
        }
    }
}

/// Which parameter a sweep moves.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepKind {
    Res,
    Phi,
}

impl SweepKind {
    pub fn command(self) -> &'static str {
        match self {
            SweepKind::Res => "sweep-res",
            SweepKind::Phi => "sweep-phi",
        }
    }

    fn file_stem(self) -> &'static str {
        match self {
            SweepKind::Res => "sweep_res",
            SweepKind::Phi => "sweep_phi",
        }
    }

    fn variable(self) -> &'static str {
        match self {
            SweepKind::Res => "res_level",
            SweepKind::Phi => "phi",
        }
    }
}

/// One sweep point; the headline is absent when the point failed.
#[derive(Clone, Debug, Serialize)]
pub struct SweepPoint {
    pub x: f64,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub headline: Option<Headline>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residuals: Option<KktReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solve_report: Option<SolveReport>,
}

/// Least-squares line of one outcome against the swept variable.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trend {
    pub outcome: &'static str,
    pub slope: f64,
    pub intercept: f64,
    pub points: usize,
}

pub fn least_squares(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

pub fn trends(points: &[SweepPoint]) -> Vec<Trend> {
    HEADLINE_COLUMNS
        .iter()
        .enumerate()
        .filter_map(|(c, name)| {
            let (xs, ys): (Vec<f64>, Vec<f64>) = points
                .iter()
                .filter_map(|p| Some((p.x, p.headline.as_ref()?.values()[c]?)))
                .unzip();
            least_squares(&xs, &ys).map(|(slope, intercept)| Trend {
                outcome: name,
                slope,
                intercept,
                points: xs.len(),
            })
        })
        .collect()
}

pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    pub trends: Vec<Trend>,
    pub written: Written,
}

/// Config of sweep point `x`, scenario count already fixed by the caller.
pub fn point_config(base: &Config, kind: SweepKind, x: f64) -> Config {
    match kind {
        SweepKind::Res => base.at_res_level(x),
        SweepKind::Phi => base.at_phi(x),
    }
}

fn solve_point(cfg: &Config, x: f64) -> SweepPoint {
    let failed = |message: String| SweepPoint {
        x,
        status: "failed",
        headline: None,
        message: Some(message),
        residuals: None,
        solve_report: None,
    };
    match solve_config(cfg) {
        Ok(Ok(s)) => SweepPoint {
            x,
            status: "ok",
            headline: Some(s.headline),
            message: None,
            residuals: Some(s.solution.kkt),
            solve_report: Some(s.solution.solve_report),
        },
        Ok(Err(f)) => failed(f.message),
        Err(e) => failed(e.to_string()),
    }
}

/// Runs every sweep point with common random numbers (the scenario seed
/// is shared) and writes long, wide and trend CSVs plus a JSON record.
/// Rows are in sweep order whatever the completion order.
pub fn run_sweep(base: &Config, kind: SweepKind) -> Result<SweepResult> {
    let base = base.clone().resolve_count(match kind {
        SweepKind::Res => base.risk.phi > 0.0,
        SweepKind::Phi => base.sweep.phis().iter().any(|p| *p > 0.0),
    });
    let hash = base.hash();
    let xs = match kind {
        SweepKind::Res => base.sweep.levels(),
        SweepKind::Phi => base.sweep.phis(),
    };
    fs::create_dir_all(&base.output.dir)?;
    let workers = base
        .sweep
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    let points: Vec<SweepPoint> = pool.install(|| {
        xs.par_iter()
            .map(|&x| {
                let p = solve_point(&point_config(&base, kind, x), x);
                log::info!("{} {}={x}: {}", kind.command(), kind.variable(), p.status);
                p
            })
            .collect()
    });
    let trend = trends(&points);

    let stem = kind.file_stem();
    let long = output_path(&base, &format!("{stem}_long.csv"));
    let wide = output_path(&base, &format!("{stem}_wide.csv"));
    let summary = output_path(&base, &format!("{stem}_summary.csv"));
    let json = output_path(&base, &format!("{stem}.json"));

    let mut w = csv::Writer::from_path(&long)?;
    w.write_record(RUN_COLUMNS.iter().chain(&["status", "outcome", "value"]))?;
    for p in &points {
        let cfg = point_config(&base, kind, p.x);
        let values = p.headline.as_ref().map(|h| h.values());
        for (c, name) in HEADLINE_COLUMNS.iter().enumerate() {
            let mut row = run_cells(kind.command(), &cfg, &hash);
            row.push(p.status.into());
            row.push((*name).into());
            row.push(opt6(values.and_then(|v| v[c])));
            w.write_record(&row)?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(&wide)?;
    w.write_record(RUN_COLUMNS.iter().chain(&["status"]).chain(&HEADLINE_COLUMNS))?;
    for p in &points {
        let cfg = point_config(&base, kind, p.x);
        let mut row = run_cells(kind.command(), &cfg, &hash);
        row.push(p.status.into());
        match &p.headline {
            Some(h) => row.extend(h.values().into_iter().map(opt6)),
            None => row.extend(std::iter::repeat_n(String::new(), HEADLINE_COLUMNS.len())),
        }
        w.write_record(&row)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(&summary)?;
    w.write_record([
        "command", "model", "conduct", "variable", "seed", "config_hash", "outcome", "slope", "intercept", "points",
    ])?;
    for t in &trend {
        w.write_record([
            kind.command().to_string(),
            base.model.to_string(),
            base.conduct.preset.to_string(),
            kind.variable().into(),
            base.scenarios.seed.to_string(),
            hash.clone(),
            t.outcome.into(),
            sig6(t.slope),
            sig6(t.intercept),
            t.points.to_string(),
        ])?;
    }
    w.flush()?;

    #[derive(Serialize)]
    struct SweepDocument<'a> {
        command: &'a str,
        config_hash: &'a str,
        seed: u64,
        config: &'a Config,
        variable: &'a str,
        points: &'a [SweepPoint],
        trends: &'a [Trend],
    }
    write_json(
        &json,
        &SweepDocument {
            command: kind.command(),
            config_hash: &hash,
            seed: base.scenarios.seed,
            config: &base,
            variable: kind.variable(),
            points: &points,
            trends: &trend,
        },
    )?;

    let failed = points.iter().filter(|p| p.headline.is_none()).count();
    let mut files = vec![long, wide, summary, json];
    files.push(write_manifest(&base, kind.command(), &hash, &files, points.len(), failed)?);
    Ok(SweepResult { points, trends: trend, written: Written { files } })
}
