//! Study configuration: one TOML file, validated as a whole, with every
//! error anchored to a line of the source when one can be found.

use std::fmt;
use std::path::{Path, PathBuf};

use elmarket_core::risk::DEFAULT_ALPHA;
use elmarket_core::scenario::{RISK_AVERSE_SCENARIOS, RISK_NEUTRAL_SCENARIOS};
use elmarket_core::{
    CalibrationConfig, ConductParams, ConductPreset, FuturesBounds, MarketInstance, MarketModel,
    ParamFamily, RiskConfig, ScenarioSet, SolverOptions,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A normal draw given by its mean and either `sd` or `cv`; `sd` wins
/// when both are present.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normal {
    pub mean: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv: Option<f64>,
}

impl Normal {
    pub fn std_dev(&self) -> f64 {
        self.sd.unwrap_or_else(|| self.mean * self.cv.unwrap_or(0.0))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConventionalSpec {
    #[serde(default)]
    pub a: f64,
    pub b: Normal,
    pub c: Normal,
    #[serde(default)]
    pub futures_min: f64,
    pub futures_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResSpec {
    pub capacity: Normal,
    #[serde(default)]
    pub futures_min: f64,
    /// Defaults to the capacity mean, and follows it through RES sweeps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub futures_max: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generators {
    pub conventional: Vec<ConventionalSpec>,
    #[serde(default)]
    pub res: Vec<ResSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Demand {
    pub gamma: Normal,
    pub beta: Normal,
    /// Futures demand defaults to the mean spot demand.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_futures: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_futures: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Conduct {
    #[serde(default)]
    pub preset: Preset,
    /// Explicit conjectures, conventional generators only for `delta` and
    /// every generator for `psi`; each overrides the preset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<Vec<f64>>,
}

/// Conduct preset names as they appear in files and on the command line.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    #[default]
    Cournot,
    #[serde(alias = "perfect-competition")]
    Perfect,
}

impl From<Preset> for ConductPreset {
    fn from(p: Preset) -> Self {
        match p {
            Preset::Cournot => ConductPreset::Cournot,
            Preset::Perfect => ConductPreset::PerfectCompetition,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Cournot => "cournot",
            Preset::Perfect => "perfect",
        })
    }
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Risk {
    #[serde(default)]
    pub phi: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

impl Default for Risk {
    fn default() -> Self {
        Self { phi: 0.0, alpha: default_alpha() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenarios {
    /// Defaults to 150 for risk-neutral studies and 200 otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub res_levels: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_values: Option<Vec<f64>>,
    /// Worker threads; defaults to the available parallelism.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

impl Sweep {
    pub fn levels(&self) -> Vec<f64> {
        self.res_levels
            .clone()
            .unwrap_or_else(|| (0..=10).map(|i| 1000.0 * i as f64).collect())
    }

    pub fn phis(&self) -> Vec<f64> {
        self.phi_values
            .clone()
            .unwrap_or_else(|| (0..=10).map(|i| i as f64 / 10.0).collect())
    }
}

fn default_dir() -> PathBuf {
    PathBuf::from("results")
}

fn default_prefix() -> String {
    "elmarket".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_prefix")]
    pub prefix: String,
}

impl Default for Output {
    fn default() -> Self {
        Self { dir: default_dir(), prefix: default_prefix() }
    }
}

fn default_model() -> MarketModel {
    MarketModel::Gm
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "default_model")]
    pub model: MarketModel,
    pub generators: Generators,
    pub demand: Demand,
    #[serde(default)]
    pub conduct: Conduct,
    #[serde(default)]
    pub risk: Risk,
    #[serde(default)]
    pub scenarios: Scenarios,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub sweep: Sweep,
    #[serde(default)]
    pub output: Output,
}

/// Invalid configuration, with the source position when known.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    pub origin: String,
    pub line: Option<usize>,
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "{}:{line}: ", self.origin)?,
            None => write!(f, "{}: ", self.origin)?,
        }
        if !self.path.is_empty() {
            write!(f, "{}: ", self.path)?;
        }
        f.write_str(&self.message)
    }
}

impl std::error::Error for ConfigError {}

/// A field path plus message, before it is placed in a source.
#[derive(Debug)]
pub struct Invalid {
    pub path: String,
    pub message: String,
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> Invalid {
    Invalid { path: path.into(), message: message.into() }
}

impl Invalid {
    fn anchored(self, origin: &str, source: Option<&str>) -> ConfigError {
        ConfigError {
            origin: origin.into(),
            line: source.and_then(|s| locate(s, &self.path)),
            path: self.path,
            message: self.message,
        }
    }
}

/// Command-line values that replace file values.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub model: Option<MarketModel>,
    pub conduct: Option<Preset>,
    pub phi: Option<f64>,
    pub alpha: Option<f64>,
    pub scenarios: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Environment variable that replaces the output directory of the file
/// (a `--out` flag still wins).
pub const OUT_DIR_ENV: &str = "ELMARKET_OUT_DIR";

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let origin = path.display().to_string();
        let source = std::fs::read_to_string(path).map_err(|e| ConfigError {
            origin: origin.clone(),
            line: None,
            path: String::new(),
            message: e.to_string(),
        })?;
        Self::parse(&source, &origin)
    }

    pub fn parse(source: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(source).map_err(|e| ConfigError {
            origin: origin.into(),
            line: e.span().map(|s| line_of(source, s.start)),
            path: String::new(),
            message: e.message().trim().replace('\n', "; "),
        })?;
        cfg.validate().map_err(|e| e.anchored(origin, Some(source)))?;
        Ok(cfg)
    }

    /// Applies command-line and environment overrides, then validates.
    pub fn with_overrides(mut self, o: &Overrides) -> Result<Self, ConfigError> {
        if let Some(m) = o.model {
            self.model = m;
        }
        if let Some(p) = o.conduct {
            self.conduct = Conduct { preset: p, delta: None, psi: None };
        }
        if let Some(v) = o.phi {
            self.risk.phi = v;
        }
        if let Some(v) = o.alpha {
            self.risk.alpha = v;
        }
        if let Some(v) = o.scenarios {
            self.scenarios.count = Some(v);
        }
        if let Some(v) = o.seed {
            self.scenarios.seed = v;
        }
        if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
            if !dir.is_empty() {
                self.output.dir = PathBuf::from(dir);
            }
        }
        if let Some(dir) = &o.out {
            self.output.dir = dir.clone();
        }
        self.validate().map_err(|e| e.anchored("command line", None))?;
        Ok(self)
    }

    fn validate(&self) -> Result<(), Invalid> {
        let conv = &self.generators.conventional;
        if conv.is_empty() {
            return Err(invalid("generators.conventional", "at least one conventional generator is required"));
        }
        for (i, g) in conv.iter().enumerate() {
            let at = |k: &str| format!("generators.conventional[{i}].{k}");
            normal(&g.b, &at("b"), true)?;
            normal(&g.c, &at("c"), false)?;
            finite(g.a, &at("a"))?;
            bounds(g.futures_min, g.futures_max, &at("futures_max"))?;
        }
        for (j, r) in self.generators.res.iter().enumerate() {
            let at = |k: &str| format!("generators.res[{j}].{k}");
            normal(&r.capacity, &at("capacity"), true)?;
            bounds(r.futures_min, r.futures_max.unwrap_or(r.capacity.mean), &at("futures_max"))?;
        }
        normal(&self.demand.gamma, "demand.gamma", false)?;
        normal(&self.demand.beta, "demand.beta", false)?;
        if let Some(g) = self.demand.gamma_futures {
            positive(g, "demand.gamma_futures")?;
        }
        if let Some(b) = self.demand.beta_futures {
            positive(b, "demand.beta_futures")?;
        }
        self.conduct_params().map_err(|e| invalid("conduct", e.to_string()))?;
        if !(0.0..=1.0).contains(&self.risk.phi) {
            return Err(invalid("risk.phi", format!("{} is outside [0, 1]", self.risk.phi)));
        }
        if !(self.risk.alpha > 0.0 && self.risk.alpha < 1.0) {
            return Err(invalid("risk.alpha", format!("{} is outside (0, 1)", self.risk.alpha)));
        }
        if self.scenarios.count == Some(0) {
            return Err(invalid("scenarios.count", "must be at least 1"));
        }
        self.solver.validate().map_err(|e| invalid("solver", e.to_string()))?;
        let levels = self.sweep.levels();
        if levels.is_empty() || levels.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(invalid("sweep.res_levels", "levels must be a nonempty list of nonnegative numbers"));
        }
        let phis = self.sweep.phis();
        if phis.is_empty() || phis.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(invalid("sweep.phi_values", "values must be a nonempty list within [0, 1]"));
        }
        if self.sweep.workers == Some(0) {
            return Err(invalid("sweep.workers", "must be at least 1"));
        }
        if self.output.prefix.is_empty() || self.output.prefix.contains(['/', '\\']) {
            return Err(invalid("output.prefix", "must be a nonempty file name"));
        }
        Ok(())
    }

    pub fn n_conventional(&self) -> usize {
        self.generators.conventional.len()
    }

    pub fn n_res(&self) -> usize {
        self.generators.res.len()
    }

    pub fn conduct_params(&self) -> elmarket_core::Result<ConductParams> {
        let (i, j) = (self.n_conventional(), self.n_res());
        let base = ConductParams::from_preset(self.conduct.preset.into(), i, j);
        if self.conduct.delta.is_none() && self.conduct.psi.is_none() {
            return Ok(base);
        }
        ConductParams::new(
            self.conduct.delta.clone().unwrap_or_else(|| base.delta().to_vec()),
            self.conduct.psi.clone().unwrap_or_else(|| base.psi().to_vec()),
        )
    }

    pub fn risk_config(&self) -> RiskConfig {
        RiskConfig::new(self.risk.phi, self.risk.alpha).expect("validated")
    }

    /// Scenario count, falling back to the default for the given study.
    pub fn scenario_count(&self, risk_averse: bool) -> usize {
        self.scenarios.count.unwrap_or(if risk_averse {
            RISK_AVERSE_SCENARIOS
        } else {
            RISK_NEUTRAL_SCENARIOS
        })
    }

    /// Fixes the scenario count so that the config echo is complete.
    pub fn resolve_count(mut self, risk_averse: bool) -> Self {
        self.scenarios.count = Some(self.scenario_count(risk_averse));
        self
    }

    pub fn calibration(&self) -> CalibrationConfig {
        let conv = &self.generators.conventional;
        let res = &self.generators.res;
        let family = |items: Vec<&Normal>| {
            ParamFamily::with_sd(
                items.iter().map(|n| n.mean).collect(),
                0.0,
                items.iter().map(|n| n.std_dev()).collect(),
            )
        };
        CalibrationConfig {
            cost_a: conv.iter().map(|g| g.a).collect(),
            cost_b: family(conv.iter().map(|g| &g.b).collect()),
            cost_c: family(conv.iter().map(|g| &g.c).collect()),
            gamma: family(vec![&self.demand.gamma]),
            beta: family(vec![&self.demand.beta]),
            res_capacity: family(res.iter().map(|r| &r.capacity).collect()),
            scenario_count: self.scenario_count(self.risk.phi > 0.0),
            seed: self.scenarios.seed,
        }
    }

    pub fn instance(&self, set: &ScenarioSet) -> elmarket_core::Result<MarketInstance> {
        let conv: Vec<FuturesBounds> = self
            .generators
            .conventional
            .iter()
            .map(|g| FuturesBounds::new(g.futures_min, g.futures_max))
            .collect::<elmarket_core::Result<_>>()?;
        let res: Vec<FuturesBounds> = self
            .generators
            .res
            .iter()
            .map(|r| FuturesBounds::new(r.futures_min, r.futures_max.unwrap_or(r.capacity.mean)))
            .collect::<elmarket_core::Result<_>>()?;
        let gamma_f = self.demand.gamma_futures.unwrap_or(self.demand.gamma.mean);
        let beta_f = self.demand.beta_futures.unwrap_or(self.demand.beta.mean);
        set.instance(gamma_f, beta_f, &conv, &res, self.conduct_params()?, self.model)
    }

    /// The same study with every RES capacity mean set to `level`.
    pub fn at_res_level(&self, level: f64) -> Self {
        let mut c = self.clone();
        for r in &mut c.generators.res {
            r.capacity.mean = level;
        }
        c
    }

    pub fn at_phi(&self, phi: f64) -> Self {
        let mut c = self.clone();
        c.risk.phi = phi;
        c
    }

    /// SHA-256 of the canonical JSON echo, leaving out where outputs go.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output.dir = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serialises");
        hex::encode(Sha256::digest(bytes))
    }
}

fn finite(v: f64, path: &str) -> Result<(), Invalid> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(invalid(path, format!("{v} is not finite")))
    }
}

fn positive(v: f64, path: &str) -> Result<(), Invalid> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(path, format!("{v} must be positive")))
    }
}

fn normal(n: &Normal, path: &str, allow_zero: bool) -> Result<(), Invalid> {
    if !n.mean.is_finite() || n.mean < 0.0 || (!allow_zero && n.mean == 0.0) {
        return Err(invalid(format!("{path}.mean"), format!("{} out of range", n.mean)));
    }
    if n.sd.is_some_and(|s| !(s.is_finite() && s >= 0.0)) {
        return Err(invalid(format!("{path}.sd"), "must be nonnegative"));
    }
    if n.cv.is_some_and(|s| !(s.is_finite() && s >= 0.0)) {
        return Err(invalid(format!("{path}.cv"), "must be nonnegative"));
    }
    Ok(())
}

fn bounds(min: f64, max: f64, path: &str) -> Result<(), Invalid> {
    if min.is_finite() && max.is_finite() && 0.0 <= min && min <= max {
        Ok(())
    } else {
        Err(invalid(path, format!("need 0 <= futures_min <= futures_max, got [{min}, {max}]")))
    }
}

fn line_of(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].matches('\n').count() + 1
}

/// Best-effort line of a dotted field path such as
/// `generators.conventional[1].b.mean`: the key line inside the right
/// table, else the table header, else the nearest ancestor that is found.
pub fn locate(source: &str, path: &str) -> Option<usize> {
    let mut parts: Vec<(String, Option<usize>)> = path
        .split('.')
        .map(|p| match p.split_once('[') {
            Some((name, idx)) => (name.to_string(), idx.trim_end_matches(']').parse().ok()),
            None => (p.to_string(), None),
        })
        .collect();
    while !parts.is_empty() {
        if let Some(line) = locate_exact(source, &parts) {
            return Some(line);
        }
        parts.pop();
    }
    None
}

fn locate_exact(source: &str, parts: &[(String, Option<usize>)]) -> Option<usize> {
    // the table is the longest prefix that carries an index, or all but
    // the last component
    let split = parts.iter().rposition(|p| p.1.is_some()).map_or(parts.len() - 1, |i| i + 1);
    let table: Vec<&str> = parts[..split].iter().map(|p| p.0.as_str()).collect();
    let index = parts[..split].last().and_then(|p| p.1);
    let keys = &parts[split..];
    let table_name = table.join(".");

    let mut in_table = table.is_empty();
    let mut seen = 0usize;
    for (n, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if let Some(header) = line.strip_prefix('[') {
            let array = header.starts_with('[');
            let name = header.trim_start_matches('[').split(']').next().unwrap_or("").trim();
            in_table = false;
            if name == table_name {
                if array {
                    seen += 1;
                    in_table = index.is_none_or(|i| seen == i + 1);
                } else {
                    in_table = index.is_none();
                }
                if in_table && keys.is_empty() {
                    return Some(n + 1);
                }
            }
            continue;
        }
        if in_table {
            if let Some(first) = keys.first() {
                let key = line.split('=').next().unwrap_or("").trim();
                if line.contains('=') && key == first.0 {
                    return Some(n + 1);
                }
            }
        }
    }
    None
}
