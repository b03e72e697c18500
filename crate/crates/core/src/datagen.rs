//! Data distributions with deterministic sampling and, where one exists, a
//! closed-form population risk.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossFamily;
use crate::model::{dot, Sample};
use crate::rng::RngStream;

/// A distribution over finitely many samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteDistribution {
    support: Vec<Sample>,
    probs: Vec<f64>,
}

impl FiniteDistribution {
    pub fn new(support: Vec<Sample>, probs: Vec<f64>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::InvalidConfig("finite distribution needs at least one support point".into()));
        }
        if support.len() != probs.len() {
            return Err(Error::DimensionMismatch { expected: support.len(), got: probs.len() });
        }
        if support.iter().any(|s| !s.is_compatible(&support[0]) || !s.is_finite()) {
            return Err(Error::VariantMismatch);
        }
        if probs.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::InvalidConfig("probabilities must be positive".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!("probabilities sum to {total}, not 1")));
        }
        Ok(FiniteDistribution { support, probs })
    }

    pub fn uniform(support: Vec<Sample>) -> Result<Self> {
        let m = support.len().max(1);
        FiniteDistribution::new(support, vec![1.0 / m as f64; m])
    }

    /// A point mass.
    pub fn singleton(z: Sample) -> Self {
        FiniteDistribution { support: vec![z], probs: vec![1.0] }
    }

    pub fn support(&self) -> &[Sample] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// `E[f(Z)]`, summed in support order.
    pub fn expectation(&self, mut f: impl FnMut(&Sample) -> f64) -> f64 {
        self.support.iter().zip(&self.probs).map(|(z, p)| p * f(z)).sum()
    }

    fn draw_index(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.probs.len() - 1
    }
}

/// Rows from a file, split into a training pool and a disjoint holdout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalPool {
    train: Vec<Sample>,
    holdout: Vec<Sample>,
}

impl EmpiricalPool {
    /// Every fifth row (positions 5, 10, ...) goes to the holdout.
    pub fn new(rows: Vec<Sample>) -> Result<Self> {
        if rows.len() < 5 {
            return Err(Error::TooFewRows { needed: 5, got: rows.len() });
        }
        if rows.iter().any(|s| !s.is_compatible(&rows[0]) || !s.is_finite()) {
            return Err(Error::VariantMismatch);
        }
        let (mut train, mut holdout) = (Vec::new(), Vec::new());
        for (i, s) in rows.into_iter().enumerate() {
            if i % 5 == 4 {
                holdout.push(s);
            } else {
                train.push(s);
            }
        }
        Ok(EmpiricalPool { train, holdout })
    }

    pub fn train(&self) -> &[Sample] {
        &self.train
    }

    pub fn holdout(&self) -> &[Sample] {
        &self.holdout
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DataDistribution {
    /// `Z ~ N(m, σ²I)`.
    GaussianLocation { mean: Vec<f64>, sigma: f64 },
    /// `x ~ N(0, I)`, `y = w*ᵀx + N(0, σ²)`.
    GaussianLinear { w_star: Vec<f64>, sigma_noise: f64 },
    /// `x ~ U[0,1]^10`, `y = friedman1(x) + N(0, σ²)`.
    Friedman1 { sigma_noise: f64 },
    Finite(FiniteDistribution),
    /// Resampling with replacement from the training part of a pool.
    Empirical(EmpiricalPool),
}

/// Feature count of the friedman1 benchmark.
pub const FRIEDMAN1_DIM: usize = 10;

/// Noise-free friedman1 response.
pub fn friedman1_response(x: &[f64]) -> Result<f64> {
    if x.len() != FRIEDMAN1_DIM {
        return Err(Error::DimensionMismatch { expected: FRIEDMAN1_DIM, got: x.len() });
    }
    if let Some(v) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::DomainError(format!("friedman1 feature {v} outside [0, 1]")));
    }
    Ok(10.0 * (PI * x[0] * x[1]).sin() + 20.0 * (x[2] - 0.5).powi(2) + 10.0 * x[3] + 5.0 * x[4])
}

fn friedman1_unchecked(x: &[f64]) -> f64 {
    10.0 * (PI * x[0] * x[1]).sin() + 20.0 * (x[2] - 0.5).powi(2) + 10.0 * x[3] + 5.0 * x[4]
}

impl DataDistribution {
    pub fn validate(&self) -> Result<()> {
        let sigma_ok = |s: f64| s.is_finite() && s >= 0.0;
        match self {
            DataDistribution::GaussianLocation { mean, sigma } => {
                if mean.is_empty() || !mean.iter().all(|v| v.is_finite()) || !sigma_ok(*sigma) {
                    return Err(Error::InvalidConfig("gaussian location needs a finite mean and sigma >= 0".into()));
                }
            }
            DataDistribution::GaussianLinear { w_star, sigma_noise } => {
                if w_star.is_empty() || !w_star.iter().all(|v| v.is_finite()) || !sigma_ok(*sigma_noise) {
                    return Err(Error::InvalidConfig("gaussian linear needs a finite w* and sigma >= 0".into()));
                }
            }
            DataDistribution::Friedman1 { sigma_noise } => {
                if !sigma_ok(*sigma_noise) {
                    return Err(Error::InvalidConfig("friedman1 noise sigma must be >= 0".into()));
                }
            }
            DataDistribution::Finite(_) | DataDistribution::Empirical(_) => {}
        }
        Ok(())
    }

    /// Dimension of the samples (location or feature vector).
    pub fn dim(&self) -> usize {
        match self {
            DataDistribution::GaussianLocation { mean, .. } => mean.len(),
            DataDistribution::GaussianLinear { w_star, .. } => w_star.len(),
            DataDistribution::Friedman1 { .. } => FRIEDMAN1_DIM,
            DataDistribution::Finite(f) => f.support[0].dim(),
            DataDistribution::Empirical(p) => p.train[0].dim(),
        }
    }

    fn is_location(&self) -> bool {
        match self {
            DataDistribution::GaussianLocation { .. } => true,
            DataDistribution::GaussianLinear { .. } | DataDistribution::Friedman1 { .. } => false,
            DataDistribution::Finite(f) => matches!(f.support[0], Sample::Location(_)),
            DataDistribution::Empirical(p) => matches!(p.train[0], Sample::Location(_)),
        }
    }

    /// The loss family whose samples this distribution produces.
    pub fn natural_family(&self) -> LossFamily {
        if self.is_location() {
            LossFamily::SquaredLocation { dim: self.dim() }
        } else {
            LossFamily::OlsRegression { dim: self.dim() }
        }
    }

    pub fn check_family(&self, family: &LossFamily) -> Result<()> {
        if *family != self.natural_family() {
            return Err(Error::FamilyMismatch(family.id()));
        }
        Ok(())
    }

    /// `count` i.i.d. samples from the start of `stream`.
    pub fn draw(&self, stream: &RngStream, count: usize) -> Vec<Sample> {
        let mut rng = stream.rng();
        self.draw_with(&mut rng, count)
    }

    pub(crate) fn draw_with(&self, rng: &mut impl Rng, count: usize) -> Vec<Sample> {
        (0..count).map(|_| self.draw_one(rng)).collect()
    }

    fn draw_one(&self, rng: &mut impl Rng) -> Sample {
        let mut normal = || rng.sample::<f64, _>(StandardNormal);
        match self {
            DataDistribution::GaussianLocation { mean, sigma } => {
                Sample::Location(mean.iter().map(|m| m + sigma * normal()).collect())
            }
            DataDistribution::GaussianLinear { w_star, sigma_noise } => {
                let x: Vec<f64> = w_star.iter().map(|_| normal()).collect();
                let y = dot(w_star, &x) + sigma_noise * normal();
                Sample::Regression { x, y }
            }
            DataDistribution::Friedman1 { sigma_noise } => {
                let x: Vec<f64> = (0..FRIEDMAN1_DIM).map(|_| rng.random::<f64>()).collect();
                let y = friedman1_unchecked(&x) + sigma_noise * rng.sample::<f64, _>(StandardNormal);
                Sample::Regression { x, y }
            }
            DataDistribution::Finite(f) => f.support[f.draw_index(rng)].clone(),
            DataDistribution::Empirical(p) => p.train[rng.random_range(0..p.train.len())].clone(),
        }
    }

    /// Fresh samples for estimating population risk. Identical to [`draw`]
    /// except for empirical pools, which draw from their holdout.
    ///
    /// [`draw`]: DataDistribution::draw
    pub fn draw_test(&self, stream: &RngStream, count: usize) -> Vec<Sample> {
        match self {
            DataDistribution::Empirical(p) => {
                let mut rng = stream.rng();
                (0..count).map(|_| p.holdout[rng.random_range(0..p.holdout.len())].clone()).collect()
            }
            _ => self.draw(stream, count),
        }
    }

    /// `E_Z[ℓ(Z, w)]` when a closed form exists, `None` otherwise.
    pub fn closed_form_population_risk(&self, w: &[f64], family: &LossFamily) -> Result<Option<f64>> {
        self.check_family(family)?;
        if w.len() != family.dim() {
            return Err(Error::DimensionMismatch { expected: family.dim(), got: w.len() });
        }
        Ok(match self {
            DataDistribution::GaussianLocation { mean, sigma } => {
                let gap: f64 = w.iter().zip(mean).map(|(a, m)| (a - m) * (a - m)).sum();
                Some(gap + mean.len() as f64 * sigma * sigma)
            }
            DataDistribution::GaussianLinear { w_star, sigma_noise } => {
                let gap: f64 = w.iter().zip(w_star).map(|(a, m)| (a - m) * (a - m)).sum();
                Some(gap + sigma_noise * sigma_noise)
            }
            DataDistribution::Finite(f) => Some(f.expectation(|z| family.loss_unchecked(z, w))),
            DataDistribution::Friedman1 { .. } | DataDistribution::Empirical(_) => None,
        })
    }

    pub fn has_closed_form(&self) -> bool {
        !matches!(self, DataDistribution::Friedman1 { .. } | DataDistribution::Empirical(_))
    }
}
