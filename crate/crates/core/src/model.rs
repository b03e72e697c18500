//! Domain types shared by every other module: samples, client datasets,
//! round blocks, learning-rate schedules and run configuration.
//!
//! Indices exposed through the public API (clients, rounds, steps, sample
//! positions) are 1-based to line up with the usual FL-SGD notation. Storage
//! is 0-based.

use std::ops::{Deref, DerefMut, RangeInclusive};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossFamily;
use crate::rng::RngStream;

/// One data point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Sample {
    /// A location vector `z`.
    Location(Vec<f64>),
    /// A feature/label pair.
    Regression { x: Vec<f64>, y: f64 },
}

impl Sample {
    pub fn location(z: impl Into<Vec<f64>>) -> Self {
        Sample::Location(z.into())
    }

    pub fn regression(x: impl Into<Vec<f64>>, y: f64) -> Self {
        Sample::Regression { x: x.into(), y }
    }

    /// Dimension of the location vector or of the feature vector.
    pub fn dim(&self) -> usize {
        match self {
            Sample::Location(z) => z.len(),
            Sample::Regression { x, .. } => x.len(),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Sample::Location(z) => z.iter().all(|v| v.is_finite()),
            Sample::Regression { x, y } => y.is_finite() && x.iter().all(|v| v.is_finite()),
        }
    }

    /// Same variant and same dimension.
    pub fn is_compatible(&self, other: &Sample) -> bool {
        matches!(
            (self, other),
            (Sample::Location(_), Sample::Location(_))
                | (Sample::Regression { .. }, Sample::Regression { .. })
        ) && self.dim() == other.dim()
    }

    /// Bitwise equality, distinguishing `-0.0` from `0.0`.
    pub fn bitwise_eq(&self, other: &Sample) -> bool {
        fn same(a: &[f64], b: &[f64]) -> bool {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
        }
        match (self, other) {
            (Sample::Location(a), Sample::Location(b)) => same(a, b),
            (Sample::Regression { x: a, y: ya }, Sample::Regression { x: b, y: yb }) => {
                ya.to_bits() == yb.to_bits() && same(a, b)
            }
            _ => false,
        }
    }
}

/// A parameter vector shared by clients and server.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Model(pub Vec<f64>);

impl Model {
    pub fn zeros(dim: usize) -> Self {
        Model(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn bitwise_eq(&self, other: &Model) -> bool {
        self.0.len() == other.0.len()
            && self.0.iter().zip(&other.0).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl From<Vec<f64>> for Model {
    fn from(v: Vec<f64>) -> Self {
        Model(v)
    }
}

impl Deref for Model {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Model {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// The ordered dataset of one client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientDataset {
    samples: Vec<Sample>,
}

impl ClientDataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InvalidConfig("client dataset must hold at least one sample".into()))?;
        for s in &samples {
            if !s.is_compatible(first) {
                return Err(Error::VariantMismatch);
            }
            if !s.is_finite() {
                return Err(Error::DomainError("non-finite sample coordinate".into()));
            }
        }
        Ok(ClientDataset { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    /// 1-based access.
    pub fn get(&self, index: usize) -> Option<&Sample> {
        index.checked_sub(1).and_then(|i| self.samples.get(i))
    }
}

/// `K` client datasets of equal size `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederatedDataset {
    clients: Vec<ClientDataset>,
}

impl FederatedDataset {
    pub fn new(clients: Vec<ClientDataset>) -> Result<Self> {
        let first = clients
            .first()
            .ok_or_else(|| Error::InvalidConfig("at least one client is required".into()))?;
        let n = first.len();
        let proto = &first.samples[0];
        for c in &clients {
            if c.len() != n {
                return Err(Error::InvalidConfig(format!(
                    "clients must hold equal sample counts ({} vs {n})",
                    c.len()
                )));
            }
            if !c.samples[0].is_compatible(proto) {
                return Err(Error::VariantMismatch);
            }
        }
        Ok(FederatedDataset { clients })
    }

    /// Splits a flat client-major sample list into `clients` datasets.
    pub fn from_flat(samples: Vec<Sample>, clients: usize) -> Result<Self> {
        if clients == 0 || !samples.len().is_multiple_of(clients) || samples.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "{} samples cannot be split evenly across {clients} clients",
                samples.len()
            )));
        }
        let n = samples.len() / clients;
        let mut it = samples.into_iter();
        let parts = (0..clients)
            .map(|_| ClientDataset::new(it.by_ref().take(n).collect()))
            .collect::<Result<Vec<_>>>()?;
        FederatedDataset::new(parts)
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn samples_per_client(&self) -> usize {
        self.clients[0].len()
    }

    pub fn clients(&self) -> &[ClientDataset] {
        &self.clients
    }

    /// 1-based client access.
    pub fn client(&self, k: usize) -> Option<&ClientDataset> {
        k.checked_sub(1).and_then(|i| self.clients.get(i))
    }

    /// Sample `i` of client `k`, both 1-based. Panics when out of range.
    pub fn sample(&self, k: usize, i: usize) -> &Sample {
        &self.clients[k - 1].samples[i - 1]
    }

    /// A prototype sample (for dimension and variant checks).
    pub fn prototype(&self) -> &Sample {
        &self.clients[0].samples[0]
    }

    /// Every sample, client-major.
    pub fn iter_samples(&self) -> impl Iterator<Item = &Sample> {
        self.clients.iter().flat_map(|c| c.samples.iter())
    }

    /// A copy with client `k`'s dataset replaced.
    pub fn with_client(&self, k: usize, dataset: ClientDataset) -> Result<Self> {
        let len = self.clients.len();
        if k == 0 || k > len {
            return Err(Error::IndexOutOfRange { index: k, len });
        }
        let mut clients = self.clients.clone();
        clients[k - 1] = dataset;
        FederatedDataset::new(clients)
    }

    /// A copy with `rep` applied.
    pub fn replaced(&self, rep: &Replacement) -> Result<Self> {
        let client = self.client(rep.client).ok_or(Error::IndexOutOfRange {
            index: rep.client,
            len: self.clients.len(),
        })?;
        self.with_client(rep.client, replace_sample(client, rep.index, rep.ghost.clone())?)
    }
}

/// The samples client `k` visits during round `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundBlock<'a> {
    pub round: usize,
    /// Sample positions `(r-1)τ+1 ..= rτ`.
    pub indices: RangeInclusive<usize>,
    pub samples: &'a [Sample],
}

/// Splits a client dataset into `rounds` consecutive blocks of `n / rounds` samples.
pub fn partition_rounds(dataset: &ClientDataset, rounds: usize) -> Result<Vec<RoundBlock<'_>>> {
    let n = dataset.len();
    if rounds == 0 || !n.is_multiple_of(rounds) {
        return Err(Error::NonDivisible { n, rounds });
    }
    let tau = n / rounds;
    Ok(dataset
        .samples
        .chunks(tau)
        .enumerate()
        .map(|(r0, samples)| RoundBlock {
            round: r0 + 1,
            indices: r0 * tau + 1..=(r0 + 1) * tau,
            samples,
        })
        .collect())
}

/// Returns a copy of `dataset` holding `ghost` at 1-based position `index`.
pub fn replace_sample(dataset: &ClientDataset, index: usize, ghost: Sample) -> Result<ClientDataset> {
    let len = dataset.len();
    if index == 0 || index > len {
        return Err(Error::IndexOutOfRange { index, len });
    }
    if !ghost.is_compatible(&dataset.samples[0]) {
        return Err(Error::VariantMismatch);
    }
    let mut samples = dataset.samples.clone();
    samples[index - 1] = ghost;
    Ok(ClientDataset { samples })
}

/// Sample `index` of client `client` (both 1-based) swapped for a ghost copy.
#[derive(Debug, Clone, PartialEq)]
pub struct Replacement {
    pub client: usize,
    pub index: usize,
    pub ghost: Sample,
}

impl Replacement {
    pub fn new(client: usize, index: usize, ghost: Sample) -> Self {
        Replacement { client, index, ghost }
    }
}

/// Per-round, per-step learning rates `η_{r,t}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    rounds: usize,
    steps: usize,
    rates: Vec<f64>,
}

impl Schedule {
    pub fn constant(rounds: usize, steps: usize, eta: f64) -> Result<Self> {
        Schedule::from_flat(rounds, steps, vec![eta; rounds * steps])
    }

    /// One inner vector of `τ` rates per round.
    pub fn from_table(table: Vec<Vec<f64>>) -> Result<Self> {
        let rounds = table.len();
        let steps = table.first().map_or(0, Vec::len);
        if table.iter().any(|row| row.len() != steps) {
            return Err(Error::InvalidConfig("ragged learning-rate table".into()));
        }
        Schedule::from_flat(rounds, steps, table.into_iter().flatten().collect())
    }

    fn from_flat(rounds: usize, steps: usize, rates: Vec<f64>) -> Result<Self> {
        if rounds == 0 || steps == 0 {
            return Err(Error::InvalidConfig("schedule needs R >= 1 and tau >= 1".into()));
        }
        if let Some(bad) = rates.iter().find(|r| !r.is_finite() || **r < 0.0) {
            return Err(Error::InvalidConfig(format!("learning rate {bad} is not a finite non-negative number")));
        }
        Ok(Schedule { rounds, steps, rates })
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    /// `τ`, the number of local steps per round.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// `η_{r,t}`, 1-based.
    pub fn rate(&self, r: usize, t: usize) -> f64 {
        self.rates[(r - 1) * self.steps + (t - 1)]
    }

    /// The `τ` rates of round `r` (1-based).
    pub fn round_rates(&self, r: usize) -> &[f64] {
        &self.rates[(r - 1) * self.steps..r * self.steps]
    }
}

/// Which iterates a trajectory keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Retention {
    /// Every `W_k^{(r,t)}`.
    #[default]
    Full,
    /// Only round ends and aggregates.
    AggregatesOnly,
}

/// Everything needed to run FL-SGD on a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub n: usize,
    pub clients: usize,
    pub schedule: Schedule,
    pub w0: Model,
    pub loss: LossFamily,
    /// Standard deviation of the additive Gaussian step noise.
    pub noise_sigma: f64,
    pub seed: u64,
    /// Overrides the smoothness constant of the loss family.
    pub smoothness: Option<f64>,
    pub retention: Retention,
    /// Test hook: each aggregate is scaled by `1 + aggregation_skew`. Always 0 in real runs.
    #[doc(hidden)]
    pub aggregation_skew: f64,
}

impl RunConfig {
    /// Constant learning rate, `w0 = 0`, no noise, seed 0.
    pub fn new(n: usize, clients: usize, rounds: usize, eta: f64, loss: LossFamily) -> Result<Self> {
        if rounds == 0 || !n.is_multiple_of(rounds) {
            return Err(Error::NonDivisible { n, rounds });
        }
        let schedule = Schedule::constant(rounds, n / rounds, eta)?;
        RunConfig::with_schedule(n, clients, schedule, loss)
    }

    pub fn with_schedule(n: usize, clients: usize, schedule: Schedule, loss: LossFamily) -> Result<Self> {
        let cfg = RunConfig {
            n,
            clients,
            w0: Model::zeros(loss.dim()),
            schedule,
            loss,
            noise_sigma: 0.0,
            seed: 0,
            smoothness: None,
            retention: Retention::Full,
            aggregation_skew: 0.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_w0(mut self, w0: Model) -> Self {
        self.w0 = w0;
        self
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    pub fn with_retention(mut self, retention: Retention) -> Self {
        self.retention = retention;
        self
    }

    pub fn with_smoothness(mut self, l: f64) -> Self {
        self.smoothness = Some(l);
        self
    }

    pub fn rounds(&self) -> usize {
        self.schedule.rounds()
    }

    pub fn steps(&self) -> usize {
        self.schedule.steps()
    }

    /// `L` used by the bound: the override if present, else the family's constant.
    pub fn smoothness_constant(&self) -> f64 {
        self.smoothness.unwrap_or_else(|| self.loss.smoothness_constant())
    }

    /// Noise stream of replicate 0; Monte-Carlo callers derive their own.
    pub fn noise_stream(&self) -> RngStream {
        RngStream::derive(self.seed, "noise", 0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 || self.n == 0 {
            return Err(Error::InvalidConfig("n and K must be at least 1".into()));
        }
        if self.schedule.rounds() * self.schedule.steps() != self.n {
            return Err(Error::NonDivisible { n: self.n, rounds: self.schedule.rounds() });
        }
        if self.w0.dim() != self.loss.dim() {
            return Err(Error::DimensionMismatch { expected: self.loss.dim(), got: self.w0.dim() });
        }
        if !self.w0.is_finite() {
            return Err(Error::InvalidConfig("initial model must be finite".into()));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::InvalidConfig("noise sigma must be finite and >= 0".into()));
        }
        if let Some(l) = self.smoothness {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::InvalidConfig("smoothness override must be positive".into()));
            }
        }
        Ok(())
    }

    /// Checks that `data` has the shape and sample variant this configuration expects.
    pub fn check_data(&self, data: &FederatedDataset) -> Result<()> {
        if data.num_clients() != self.clients {
            return Err(Error::InvalidConfig(format!(
                "dataset has {} clients, configuration expects {}",
                data.num_clients(),
                self.clients
            )));
        }
        if data.samples_per_client() != self.n {
            return Err(Error::InvalidConfig(format!(
                "dataset has n = {}, configuration expects {}",
                data.samples_per_client(),
                self.n
            )));
        }
        self.loss.check(data.prototype())
    }
}
