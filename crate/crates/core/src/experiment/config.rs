//! Line-oriented `key = value` experiment configuration.
//!
//! ```text
//! # Figure-style sweep
//! n = 500
//! K = 10
//! d = 10
//! R = 1,2,5,10,25
//! eta = 0.01
//! seed = 42
//! dist = friedman1
//! loss = ols_regression
//! ```
//!
//! `[section]` headers are ignored and `#` starts a comment.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bound::{APrimeRound1, BoundOptions};
use crate::datagen::{DataDistribution, EmpiricalPool, FiniteDistribution, FRIEDMAN1_DIM};
use crate::error::{Error, Result};
use crate::experiment::ingest::read_samples_csv;
use crate::loss::LossFamily;
use crate::model::{Model, RunConfig, Sample};

/// Data distribution as written in the configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistSpec {
    GaussianLocation { mean: Vec<f64>, sigma: f64 },
    GaussianLinear { w_star: Vec<f64>, sigma_noise: f64 },
    Friedman1 { sigma_noise: f64 },
    /// Location points with probabilities (uniform when omitted).
    Finite { support: Vec<Vec<f64>>, probs: Option<Vec<f64>> },
    /// Rows of a CSV file.
    Empirical { csv: String },
}

impl DistSpec {
    pub fn id(&self) -> &'static str {
        match self {
            DistSpec::GaussianLocation { .. } => "gaussian_location",
            DistSpec::GaussianLinear { .. } => "gaussian_linear",
            DistSpec::Friedman1 { .. } => "friedman1",
            DistSpec::Finite { .. } => "finite",
            DistSpec::Empirical { .. } => "empirical",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub dist: DistSpec,
    pub loss: String,
    pub n: usize,
    pub clients: usize,
    pub dim: usize,
    pub rounds: Vec<usize>,
    pub eta: f64,
    /// Initial model; zeros when absent.
    pub w0: Option<Vec<f64>>,
    pub seed: u64,
    pub m: usize,
    pub m_inner: usize,
    /// Replicates of the second bound term; `m` when absent.
    pub m2: Option<usize>,
    pub n_test: usize,
    pub sigma_xi: f64,
    pub full_term2: bool,
    pub a_prime_r1: APrimeRound1,
    /// Overrides the smoothness constant `L`.
    pub smoothness: Option<f64>,
    /// Evaluate the bound columns.
    pub bound: bool,
    /// Evaluate the measured generalization columns.
    pub gen: bool,
    /// Record wall-clock seconds and a timestamp (makes output non-reproducible).
    pub timing: bool,
    pub out: Option<String>,
    pub json: Option<String>,
    pub svg: Option<String>,
}

const KEYS: &[&str] = &[
    "n", "K", "d", "R", "eta", "w0", "seed", "M", "M_inner", "M2", "N_test", "sigma_xi", "dist", "loss", "dist_mean",
    "dist_sigma", "w_star", "sigma_noise", "support", "probs", "csv", "full_term2", "a_prime_r1", "L", "bound", "gen",
    "timing", "out", "json", "svg",
];

struct Entry {
    line: usize,
    value: String,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

fn invalid(key: &str, reason: impl Into<String>) -> Error {
    Error::Validation { key: key.to_string(), reason: reason.into() }
}

struct Entries(Vec<(String, Entry)>);

impl Entries {
    fn get(&self, key: &str) -> Option<&Entry> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, e)| e)
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .parse::<T>()
                .map(Some)
                .map_err(|_| parse_err(e.line, format!("`{key}`: cannot parse `{}`", e.value))),
        }
    }

    fn real(&self, key: &str) -> Result<Option<f64>> {
        let v = self.parsed::<f64>(key)?;
        match v {
            Some(x) if !x.is_finite() => Err(invalid(key, "must be finite")),
            _ => Ok(v),
        }
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.get(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .split(',')
                .map(|s| s.trim().parse::<T>().map_err(|_| parse_err(e.line, format!("`{key}`: cannot parse `{s}`"))))
                .collect::<Result<Vec<_>>>()
                .map(Some),
        }
    }

    fn flag(&self, key: &str) -> Result<Option<bool>> {
        match self.get(key) {
            None => Ok(None),
            Some(e) => match e.value.to_ascii_lowercase().as_str() {
                "true" | "yes" | "1" | "on" => Ok(Some(true)),
                "false" | "no" | "0" | "off" => Ok(Some(false)),
                other => Err(parse_err(e.line, format!("`{key}`: expected a boolean, got `{other}`"))),
            },
        }
    }

    fn text(&self, key: &str) -> Option<String> {
        self.get(key).map(|e| e.value.clone())
    }
}

fn tokenize(text: &str) -> Result<Entries> {
    let mut out: Vec<(String, Entry)> = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() || (content.starts_with('[') && content.ends_with(']')) {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| parse_err(line, format!("expected `key = value`, got `{content}`")))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(parse_err(line, "empty key"));
        }
        if !KEYS.contains(&key) {
            return Err(parse_err(line, format!("unknown key `{key}`")));
        }
        if !seen.insert(key.to_string()) {
            return Err(parse_err(line, format!("duplicate key `{key}`")));
        }
        if value.is_empty() {
            return Err(parse_err(line, format!("`{key}` has no value")));
        }
        out.push((key.to_string(), Entry { line, value: value.to_string() }));
    }
    Ok(Entries(out))
}

fn parse_points(e: &Entry) -> Result<Vec<Vec<f64>>> {
    e.value
        .split(';')
        .map(|pt| {
            pt.split(',')
                .map(|c| c.trim().parse::<f64>().map_err(|_| parse_err(e.line, format!("`support`: cannot parse `{c}`"))))
                .collect()
        })
        .collect()
}

/// Parses and validates a configuration.
pub fn parse_config(text: &str) -> Result<ExperimentSpec> {
    let e = tokenize(text)?;
    let n = e.parsed::<usize>("n")?.ok_or_else(|| invalid("n", "required"))?;
    let clients = e.parsed::<usize>("K")?.ok_or_else(|| invalid("K", "required"))?;
    let rounds = e.list::<usize>("R")?.ok_or_else(|| invalid("R", "required"))?;
    let dist_id = e.text("dist").unwrap_or_else(|| "friedman1".into());
    let sigma_noise = e.real("sigma_noise")?;

    let support = e.get("support").map(parse_points).transpose()?;
    let csv = e.text("csv");
    let default_dim = match dist_id.as_str() {
        "friedman1" => FRIEDMAN1_DIM,
        "finite" => support.as_ref().and_then(|s| s.first()).map_or(1, Vec::len),
        _ => 10,
    };
    let dim = e.parsed::<usize>("d")?.unwrap_or(default_dim);

    let dist = match dist_id.as_str() {
        "gaussian_location" => DistSpec::GaussianLocation {
            mean: e.list::<f64>("dist_mean")?.unwrap_or_else(|| vec![0.0; dim]),
            sigma: e.real("dist_sigma")?.unwrap_or(1.0),
        },
        "gaussian_linear" => DistSpec::GaussianLinear {
            w_star: e.list::<f64>("w_star")?.unwrap_or_else(|| vec![1.0; dim]),
            sigma_noise: sigma_noise.unwrap_or(1.0),
        },
        "friedman1" => DistSpec::Friedman1 { sigma_noise: sigma_noise.unwrap_or(0.0) },
        "finite" => DistSpec::Finite {
            support: support.ok_or_else(|| invalid("support", "required for dist = finite"))?,
            probs: e.list::<f64>("probs")?,
        },
        "empirical" => DistSpec::Empirical { csv: csv.ok_or_else(|| invalid("csv", "required for dist = empirical"))? },
        other => return Err(invalid("dist", format!("unknown distribution `{other}`"))),
    };
    let natural = match &dist {
        DistSpec::GaussianLocation { .. } | DistSpec::Finite { .. } => LossFamily::SQUARED_LOCATION,
        _ => LossFamily::OLS_REGRESSION,
    };
    let a_prime_r1 = match e.text("a_prime_r1").as_deref() {
        None | Some("trained") => APrimeRound1::Trained,
        Some("init") => APrimeRound1::Init,
        Some(other) => return Err(invalid("a_prime_r1", format!("expected `trained` or `init`, got `{other}`"))),
    };
    let spec = ExperimentSpec {
        loss: e.text("loss").unwrap_or_else(|| natural.to_string()),
        dist,
        n,
        clients,
        dim,
        rounds,
        eta: e.real("eta")?.unwrap_or(0.01),
        w0: e.list::<f64>("w0")?,
        seed: e.parsed::<u64>("seed")?.unwrap_or(0),
        m: e.parsed::<usize>("M")?.unwrap_or(1000),
        m_inner: e.parsed::<usize>("M_inner")?.unwrap_or(32),
        m2: e.parsed::<usize>("M2")?,
        n_test: e.parsed::<usize>("N_test")?.unwrap_or(1000),
        sigma_xi: e.real("sigma_xi")?.unwrap_or(0.0),
        full_term2: e.flag("full_term2")?.unwrap_or(false),
        a_prime_r1,
        smoothness: e.real("L")?,
        bound: e.flag("bound")?.unwrap_or(true),
        gen: e.flag("gen")?.unwrap_or(true),
        timing: e.flag("timing")?.unwrap_or(false),
        out: e.text("out"),
        json: e.text("json"),
        svg: e.text("svg"),
    };
    spec.validate()?;
    Ok(spec)
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [("n", self.n), ("K", self.clients), ("d", self.dim), ("M", self.m), ("M_inner", self.m_inner), ("N_test", self.n_test)] {
            if v == 0 {
                return Err(invalid(key, "must be at least 1"));
            }
        }
        if self.m2 == Some(0) {
            return Err(invalid("M2", "must be at least 1"));
        }
        if self.rounds.is_empty() {
            return Err(invalid("R", "at least one value is required"));
        }
        for &r in &self.rounds {
            if r == 0 || !self.n.is_multiple_of(r) {
                return Err(invalid("R", format!("{r} does not divide n = {}", self.n)));
            }
        }
        let mut sorted = self.rounds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.rounds.len() {
            return Err(invalid("R", "values must be distinct"));
        }
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(invalid("eta", "must be a finite non-negative number"));
        }
        if self.sigma_xi.is_nan() || self.sigma_xi < 0.0 {
            return Err(invalid("sigma_xi", "must be >= 0"));
        }
        if let Some(l) = self.smoothness {
            if l <= 0.0 {
                return Err(invalid("L", "must be positive"));
            }
        }
        if let Some(w0) = &self.w0 {
            if w0.len() != self.dim {
                return Err(invalid("w0", format!("has {} coordinates, d = {}", w0.len(), self.dim)));
            }
        }
        let family = LossFamily::from_id(&self.loss, self.dim).map_err(|_| invalid("loss", format!("unknown loss `{}`", self.loss)))?;
        match &self.dist {
            DistSpec::GaussianLocation { mean, sigma } => {
                if mean.len() != self.dim {
                    return Err(invalid("dist_mean", format!("has {} coordinates, d = {}", mean.len(), self.dim)));
                }
                if *sigma < 0.0 {
                    return Err(invalid("dist_sigma", "must be >= 0"));
                }
            }
            DistSpec::GaussianLinear { w_star, sigma_noise } => {
                if w_star.len() != self.dim {
                    return Err(invalid("w_star", format!("has {} coordinates, d = {}", w_star.len(), self.dim)));
                }
                if *sigma_noise < 0.0 {
                    return Err(invalid("sigma_noise", "must be >= 0"));
                }
            }
            DistSpec::Friedman1 { sigma_noise } => {
                if self.dim != FRIEDMAN1_DIM {
                    return Err(invalid("d", "friedman1 has exactly 10 features"));
                }
                if *sigma_noise < 0.0 {
                    return Err(invalid("sigma_noise", "must be >= 0"));
                }
            }
            DistSpec::Finite { support, probs } => {
                if support.iter().any(|p| p.len() != self.dim) {
                    return Err(invalid("support", format!("every point needs d = {} coordinates", self.dim)));
                }
                if let Some(p) = probs {
                    if p.len() != support.len() {
                        return Err(invalid("probs", "one probability per support point"));
                    }
                }
                self.finite_distribution().map_err(|e| invalid("probs", e.to_string()))?;
            }
            DistSpec::Empirical { .. } => {}
        }
        let natural = match &self.dist {
            DistSpec::GaussianLocation { .. } | DistSpec::Finite { .. } => Some(LossFamily::SQUARED_LOCATION),
            DistSpec::GaussianLinear { .. } | DistSpec::Friedman1 { .. } => Some(LossFamily::OLS_REGRESSION),
            DistSpec::Empirical { .. } => None,
        };
        if let Some(id) = natural {
            if family.id() != id {
                return Err(invalid("loss", format!("`{}` does not fit dist = {}", self.loss, self.dist.id())));
            }
        }
        Ok(())
    }

    fn finite_distribution(&self) -> Result<FiniteDistribution> {
        let DistSpec::Finite { support, probs } = &self.dist else {
            unreachable!("finite spec");
        };
        let points: Vec<Sample> = support.iter().map(|p| Sample::Location(p.clone())).collect();
        match probs {
            Some(p) => FiniteDistribution::new(points, p.clone()),
            None => FiniteDistribution::uniform(points),
        }
    }

    pub fn family(&self) -> Result<LossFamily> {
        LossFamily::from_id(&self.loss, self.dim)
    }

    /// Builds the distribution, reading the CSV of an empirical spec relative to `base_dir`.
    pub fn build_distribution(&self, base_dir: Option<&Path>) -> Result<DataDistribution> {
        let mu = match &self.dist {
            DistSpec::GaussianLocation { mean, sigma } => DataDistribution::GaussianLocation { mean: mean.clone(), sigma: *sigma },
            DistSpec::GaussianLinear { w_star, sigma_noise } => {
                DataDistribution::GaussianLinear { w_star: w_star.clone(), sigma_noise: *sigma_noise }
            }
            DistSpec::Friedman1 { sigma_noise } => DataDistribution::Friedman1 { sigma_noise: *sigma_noise },
            DistSpec::Finite { .. } => DataDistribution::Finite(self.finite_distribution()?),
            DistSpec::Empirical { csv } => {
                let path = match base_dir {
                    Some(dir) if Path::new(csv).is_relative() => dir.join(csv),
                    _ => Path::new(csv).to_path_buf(),
                };
                let (rows, _) = read_samples_csv(&path)?;
                DataDistribution::Empirical(EmpiricalPool::new(rows)?)
            }
        };
        mu.validate()?;
        let family = self.family()?;
        mu.check_family(&family).map_err(|_| invalid("loss", format!("`{}` does not fit the data", self.loss)))?;
        Ok(mu)
    }

    /// FL-SGD configuration for one value of `R`.
    pub fn run_config(&self, rounds: usize) -> Result<RunConfig> {
        let family = self.family()?;
        let mut cfg = RunConfig::new(self.n, self.clients, rounds, self.eta, family)?
            .with_seed(self.seed)
            .with_noise(self.sigma_xi)
            .with_w0(Model(self.w0.clone().unwrap_or_else(|| vec![0.0; self.dim])));
        if let Some(l) = self.smoothness {
            cfg = cfg.with_smoothness(l);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn bound_options(&self) -> BoundOptions {
        BoundOptions {
            m_outer: self.m,
            m_inner: self.m_inner,
            m_term2: self.m2.unwrap_or(self.m),
            full_term2: self.full_term2,
            a_prime_r1: self.a_prime_r1,
            n_test: self.n_test,
        }
    }

    /// Canonical configuration text; parsing it reproduces the spec.
    pub fn to_config_text(&self) -> String {
        fn list<T: ToString>(v: &[T]) -> String {
            v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
        }
        let mut lines = vec![
            format!("dist = {}", self.dist.id()),
            format!("loss = {}", self.loss),
            format!("n = {}", self.n),
            format!("K = {}", self.clients),
            format!("d = {}", self.dim),
            format!("R = {}", list(&self.rounds)),
            format!("eta = {}", self.eta),
        ];
        match &self.dist {
            DistSpec::GaussianLocation { mean, sigma } => {
                lines.push(format!("dist_mean = {}", list(mean)));
                lines.push(format!("dist_sigma = {sigma}"));
            }
            DistSpec::GaussianLinear { w_star, sigma_noise } => {
                lines.push(format!("w_star = {}", list(w_star)));
                lines.push(format!("sigma_noise = {sigma_noise}"));
            }
            DistSpec::Friedman1 { sigma_noise } => lines.push(format!("sigma_noise = {sigma_noise}")),
            DistSpec::Finite { support, probs } => {
                lines.push(format!("support = {}", support.iter().map(|p| list(p)).collect::<Vec<_>>().join(";")));
                if let Some(p) = probs {
                    lines.push(format!("probs = {}", list(p)));
                }
            }
            DistSpec::Empirical { csv } => lines.push(format!("csv = {csv}")),
        }
        if let Some(w0) = &self.w0 {
            lines.push(format!("w0 = {}", list(w0)));
        }
        lines.push(format!("seed = {}", self.seed));
        lines.push(format!("M = {}", self.m));
        lines.push(format!("M_inner = {}", self.m_inner));
        if let Some(m2) = self.m2 {
            lines.push(format!("M2 = {m2}"));
        }
        lines.push(format!("N_test = {}", self.n_test));
        lines.push(format!("sigma_xi = {}", self.sigma_xi));
        lines.push(format!("full_term2 = {}", self.full_term2));
        lines.push(format!("a_prime_r1 = {}", self.a_prime_r1.id()));
        if let Some(l) = self.smoothness {
            lines.push(format!("L = {l}"));
        }
        lines.push(format!("bound = {}", self.bound));
        lines.push(format!("gen = {}", self.gen));
        lines.push(format!("timing = {}", self.timing));
        for (key, v) in [("out", &self.out), ("json", &self.json), ("svg", &self.svg)] {
            if let Some(v) = v {
                lines.push(format!("{key} = {v}"));
            }
        }
        let mut text = lines.join("\n");
        text.push('\n');
        text
    }
}
