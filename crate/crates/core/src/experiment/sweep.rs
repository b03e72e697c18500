use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::bound::{theorem_bound, BoundBreakdown};
use crate::error::{Error, Result};
use crate::experiment::config::ExperimentSpec;
use crate::risk::{gen_replicates, MCEstimate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableMetadata {
    pub spec: ExperimentSpec,
    /// Canonical configuration text that reproduces the table.
    pub spec_echo: String,
    pub seed: u64,
    pub version: String,
    /// Seconds since the Unix epoch; only recorded when timing is on.
    pub timestamp: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsRow {
    pub rounds: usize,
    pub gen: Option<MCEstimate>,
    pub term1: Option<MCEstimate>,
    pub term2: Option<MCEstimate>,
    pub total: Option<MCEstimate>,
    /// Mean final empirical risk over the replicates.
    pub emp_risk: Option<f64>,
    /// Mean population risk of the final model.
    pub pop_risk: Option<f64>,
    pub proxy: Option<f64>,
    pub seconds: Option<f64>,
    pub breakdown: Option<BoundBreakdown>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub metadata: TableMetadata,
    pub rows: Vec<ResultsRow>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// Runs every `R` of the spec in ascending order.
pub fn run_sweep(spec: &ExperimentSpec) -> Result<ResultsTable> {
    run_sweep_in(spec, None)
}

/// [`run_sweep`] resolving a relative dataset path against `base_dir`.
pub fn run_sweep_in(spec: &ExperimentSpec, base_dir: Option<&Path>) -> Result<ResultsTable> {
    spec.validate()?;
    if spec.bound && spec.sigma_xi > 0.0 {
        return Err(Error::NoisyRunUnsupported);
    }
    let mu = spec.build_distribution(base_dir)?;
    let opts = spec.bound_options();
    let mut rounds = spec.rounds.clone();
    rounds.sort_unstable();
    let mut rows = Vec::with_capacity(rounds.len());
    for r in rounds {
        let started = Instant::now();
        let cfg = spec.run_config(r)?;
        let mut row = ResultsRow {
            rounds: r,
            gen: None,
            term1: None,
            term2: None,
            total: None,
            emp_risk: None,
            pop_risk: None,
            proxy: None,
            seconds: None,
            breakdown: None,
        };
        if spec.gen {
            let reps = gen_replicates(&cfg, &mu, spec.m, spec.n_test)?;
            row.gen = Some(MCEstimate::from_samples(&reps.iter().map(|o| o.gen).collect::<Vec<_>>()));
            row.emp_risk = Some(mean(reps.iter().map(|o| o.empirical)));
            row.pop_risk = Some(mean(reps.iter().map(|o| o.population)));
            row.proxy = Some(mean(reps.iter().map(|o| o.proxy)));
        }
        if spec.bound {
            let b = theorem_bound(&cfg, &mu, &opts)?;
            row.term1 = Some(b.term1);
            row.term2 = Some(b.term2);
            row.total = Some(b.total);
            row.breakdown = Some(b);
        }
        if spec.timing {
            row.seconds = Some(started.elapsed().as_secs_f64());
        }
        rows.push(row);
    }
    let timestamp = spec
        .timing
        .then(|| SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0));
    Ok(ResultsTable {
        metadata: TableMetadata {
            spec: spec.clone(),
            spec_echo: spec.to_config_text(),
            seed: spec.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp,
        },
        rows,
    })
}
