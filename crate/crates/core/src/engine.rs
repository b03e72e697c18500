//! Multi-round federated SGD.
//!
//! Each round every client starts from the previous aggregate (or `w0` in
//! round 1), takes `τ` one-sample gradient steps over its round block in
//! stored order, and the server averages the `K` round-end models. A run is
//! strictly sequential; parallelism lives one level up, across replicates.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::loss::LossFamily;
use crate::model::{FederatedDataset, Model, Replacement, Retention, RoundBlock, RunConfig, Sample};
use crate::rng::RngStream;

/// All iterates and aggregates of one FL-SGD run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    clients: usize,
    rounds: usize,
    steps: usize,
    dim: usize,
    retention: Retention,
    /// `W_k^{(r,t)}`, laid out `[k][r][t][p]` with `t ∈ 0..=τ`. Empty unless retention is full.
    iterates: Vec<f64>,
    /// `W_k^{(r,τ)}`, laid out `[k][r][p]`.
    round_ends: Vec<f64>,
    /// `W̄^{(r)}` for the rounds executed.
    aggregates: Vec<Model>,
}

impl Trajectory {
    fn empty(cfg: &RunConfig, rounds: usize, retention: Retention) -> Self {
        let (k, tau, p) = (cfg.clients, cfg.steps(), cfg.loss.dim());
        let iterates = match retention {
            Retention::Full => vec![0.0; k * rounds * (tau + 1) * p],
            Retention::AggregatesOnly => Vec::new(),
        };
        Trajectory {
            clients: k,
            rounds,
            steps: tau,
            dim: p,
            retention,
            iterates,
            round_ends: vec![0.0; k * rounds * p],
            aggregates: Vec::with_capacity(rounds),
        }
    }

    pub fn clients(&self) -> usize {
        self.clients
    }

    /// Number of rounds executed.
    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn retention(&self) -> Retention {
        self.retention
    }

    fn iter_offset(&self, k: usize, r: usize, t: usize) -> usize {
        (((k - 1) * self.rounds + (r - 1)) * (self.steps + 1) + t) * self.dim
    }

    fn end_offset(&self, k: usize, r: usize) -> usize {
        ((k - 1) * self.rounds + (r - 1)) * self.dim
    }

    /// `W_k^{(r,t)}` with `k, r` 1-based and `t ∈ 0..=τ`.
    pub fn iterate(&self, k: usize, r: usize, t: usize) -> Result<&[f64]> {
        if self.retention != Retention::Full {
            return Err(Error::RetentionInsufficient);
        }
        self.check_kr(k, r)?;
        if t > self.steps {
            return Err(Error::IndexOutOfRange { index: t, len: self.steps });
        }
        let o = self.iter_offset(k, r, t);
        Ok(&self.iterates[o..o + self.dim])
    }

    /// `W_k^{(r,τ)}`.
    pub fn round_end(&self, k: usize, r: usize) -> Result<&[f64]> {
        self.check_kr(k, r)?;
        let o = self.end_offset(k, r);
        Ok(&self.round_ends[o..o + self.dim])
    }

    /// `W̄^{(r)}`, 1-based.
    pub fn aggregate(&self, r: usize) -> Result<&Model> {
        r.checked_sub(1)
            .and_then(|i| self.aggregates.get(i))
            .ok_or(Error::IndexOutOfRange { index: r, len: self.aggregates.len() })
    }

    pub fn aggregates(&self) -> &[Model] {
        &self.aggregates
    }

    /// The output hypothesis `W̄^{(R)}`.
    pub fn final_model(&self) -> &Model {
        self.aggregates.last().expect("trajectory has at least one round")
    }

    fn check_kr(&self, k: usize, r: usize) -> Result<()> {
        if k == 0 || k > self.clients {
            return Err(Error::IndexOutOfRange { index: k, len: self.clients });
        }
        if r == 0 || r > self.rounds {
            return Err(Error::IndexOutOfRange { index: r, len: self.rounds });
        }
        Ok(())
    }

    /// Bitwise equality of every stored value.
    pub fn bitwise_eq(&self, other: &Trajectory) -> bool {
        fn same(a: &[f64], b: &[f64]) -> bool {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
        }
        self.clients == other.clients
            && self.rounds == other.rounds
            && self.steps == other.steps
            && self.retention == other.retention
            && same(&self.iterates, &other.iterates)
            && same(&self.round_ends, &other.round_ends)
            && self.aggregates.len() == other.aggregates.len()
            && self.aggregates.iter().zip(&other.aggregates).all(|(a, b)| a.bitwise_eq(b))
    }

    /// Model each client starts round `r` from.
    fn round_start(&self, cfg: &RunConfig, r: usize) -> Model {
        if r == 1 {
            cfg.w0.clone()
        } else {
            self.aggregates[r - 2].clone()
        }
    }
}

/// The dataset as seen by a run, with an optional single-sample replacement.
#[derive(Clone, Copy)]
pub(crate) struct DataView<'a> {
    pub data: &'a FederatedDataset,
    pub rep: Option<&'a Replacement>,
}

impl<'a> DataView<'a> {
    pub fn plain(data: &'a FederatedDataset) -> Self {
        DataView { data, rep: None }
    }

    pub fn sample(&self, k: usize, i: usize) -> &'a Sample {
        match self.rep {
            Some(rep) if rep.client == k && rep.index == i => &rep.ghost,
            _ => self.data.sample(k, i),
        }
    }
}

/// `count` i.i.d. `N(0, σ²)` draws from the start of `stream`.
fn gaussian_noise(stream: &RngStream, count: usize, sigma: f64) -> Vec<f64> {
    let mut rng = stream.rng();
    (0..count)
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn client_round_stream(noise: &RngStream, k: usize, r: usize) -> RngStream {
    noise.child("client-round", ((k as u64) << 32) | r as u64)
}

/// Coordinatewise mean, summed in list order.
fn mean_of<'a>(mut models: impl Iterator<Item = &'a [f64]>, count: usize) -> Vec<f64> {
    let mut acc = models.next().expect("non-empty").to_vec();
    for m in models {
        for (a, v) in acc.iter_mut().zip(m) {
            *a += v;
        }
    }
    let kf = count as f64;
    for a in acc.iter_mut() {
        *a /= kf;
    }
    acc
}

/// Server aggregation: the coordinatewise arithmetic mean, summed in client order.
pub fn aggregate(models: &[Model]) -> Result<Model> {
    let first = models.first().ok_or(Error::EmptyList)?;
    if let Some(bad) = models.iter().find(|m| m.dim() != first.dim()) {
        return Err(Error::DimensionMismatch { expected: first.dim(), got: bad.dim() });
    }
    Ok(Model(mean_of(models.iter().map(|m| m.0.as_slice()), models.len())))
}

/// One client's `τ` local steps from `w_start` over `block`.
///
/// Returns the round-end model and the iterates after each step. With a
/// noise source, `N(0, σ²I)` is added after every gradient step, drawn in
/// step order from the start of the stream.
pub fn local_sgd_round(
    w_start: &Model,
    block: &RoundBlock<'_>,
    rates: &[f64],
    family: &LossFamily,
    noise: Option<(&RngStream, f64)>,
) -> Result<(Model, Vec<Model>)> {
    if rates.len() != block.samples.len() {
        return Err(Error::DimensionMismatch { expected: block.samples.len(), got: rates.len() });
    }
    if block.samples.is_empty() {
        return Err(Error::InvalidConfig("empty round block".into()));
    }
    let p = w_start.dim();
    let xi = match noise {
        Some((stream, sigma)) if sigma > 0.0 => Some(gaussian_noise(stream, rates.len() * p, sigma)),
        _ => None,
    };
    let mut w = w_start.0.clone();
    let mut iterates = Vec::with_capacity(rates.len());
    for (t0, (z, &eta)) in block.samples.iter().zip(rates).enumerate() {
        family.check(z)?;
        family.sgd_step(z, &mut w, eta);
        if let Some(xi) = &xi {
            for (a, e) in w.iter_mut().zip(&xi[t0 * p..(t0 + 1) * p]) {
                *a += e;
            }
        }
        if !w.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteIterate { client: 0, round: block.round, step: t0 + 1 });
        }
        iterates.push(Model(w.clone()));
    }
    Ok((Model(w), iterates))
}

/// Plain sequential SGD on an arbitrary sample list, no aggregation.
pub fn centralized_sgd(w_start: &Model, samples: &[Sample], rates: &[f64], family: &LossFamily) -> Result<Model> {
    if rates.len() != samples.len() {
        return Err(Error::DimensionMismatch { expected: samples.len(), got: rates.len() });
    }
    let mut w = w_start.0.clone();
    for (t0, (z, &eta)) in samples.iter().zip(rates).enumerate() {
        family.check(z)?;
        family.sgd_step(z, &mut w, eta);
        if !w.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteIterate { client: 0, round: 0, step: t0 + 1 });
        }
    }
    Ok(Model(w))
}

impl Trajectory {
    /// Recomputes client `k`'s round `r` from step `from_step` on.
    ///
    /// For `from_step == 1` the client starts from `start`; otherwise from the
    /// stored iterate `W_k^{(r, from_step-1)}`, which requires full retention.
    #[allow(clippy::too_many_arguments)]
    fn compute_client_round(
        &mut self,
        view: DataView<'_>,
        cfg: &RunConfig,
        noise: &RngStream,
        k: usize,
        r: usize,
        start: &[f64],
        from_step: usize,
    ) -> Result<()> {
        let (tau, p) = (self.steps, self.dim);
        let full = self.retention == Retention::Full;
        let mut w = if from_step == 1 {
            start.to_vec()
        } else {
            self.iterate(k, r, from_step - 1)?.to_vec()
        };
        if from_step == 1 && full {
            let o = self.iter_offset(k, r, 0);
            self.iterates[o..o + p].copy_from_slice(&w);
        }
        let xi = (cfg.noise_sigma > 0.0)
            .then(|| gaussian_noise(&client_round_stream(noise, k, r), tau * p, cfg.noise_sigma));
        let rates = cfg.schedule.round_rates(r);
        for t in from_step..=tau {
            let z = view.sample(k, (r - 1) * tau + t);
            cfg.loss.sgd_step(z, &mut w, rates[t - 1]);
            if let Some(xi) = &xi {
                for (a, e) in w.iter_mut().zip(&xi[(t - 1) * p..t * p]) {
                    *a += e;
                }
            }
            if !w.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFiniteIterate { client: k, round: r, step: t });
            }
            if full {
                let o = self.iter_offset(k, r, t);
                self.iterates[o..o + p].copy_from_slice(&w);
            }
        }
        let o = self.end_offset(k, r);
        self.round_ends[o..o + p].copy_from_slice(&w);
        Ok(())
    }

    /// Averages the round-`r` client models into `W̄^{(r)}` (replacing any stored value).
    fn aggregate_round(&mut self, cfg: &RunConfig, r: usize) -> Model {
        let mut mean = mean_of((1..=self.clients).map(|k| {
            let o = self.end_offset(k, r);
            &self.round_ends[o..o + self.dim]
        }), self.clients);
        if cfg.aggregation_skew != 0.0 {
            for v in mean.iter_mut() {
                *v *= 1.0 + cfg.aggregation_skew;
            }
        }
        let m = Model(mean);
        if self.aggregates.len() >= r {
            self.aggregates[r - 1] = m.clone();
            self.aggregates.truncate(r);
        } else {
            self.aggregates.push(m.clone());
        }
        m
    }

    /// Runs rounds `first..=self.rounds` for every client.
    fn run_rounds_from(&mut self, view: DataView<'_>, cfg: &RunConfig, noise: &RngStream, first: usize) -> Result<()> {
        for r in first..=self.rounds {
            let start = self.round_start(cfg, r);
            for k in 1..=self.clients {
                self.compute_client_round(view, cfg, noise, k, r, &start, 1)?;
            }
            self.aggregate_round(cfg, r);
        }
        Ok(())
    }
}

pub(crate) fn run_view(
    view: DataView<'_>,
    cfg: &RunConfig,
    rounds: usize,
    retention: Retention,
    noise: &RngStream,
) -> Result<Trajectory> {
    cfg.validate()?;
    cfg.check_data(view.data)?;
    if let Some(rep) = view.rep {
        check_replacement(view.data, rep)?;
    }
    let mut traj = Trajectory::empty(cfg, rounds.min(cfg.rounds()), retention);
    traj.run_rounds_from(view, cfg, noise, 1)?;
    Ok(traj)
}

fn check_replacement(data: &FederatedDataset, rep: &Replacement) -> Result<()> {
    let k = data.num_clients();
    if rep.client == 0 || rep.client > k {
        return Err(Error::IndexOutOfRange { index: rep.client, len: k });
    }
    let n = data.samples_per_client();
    if rep.index == 0 || rep.index > n {
        return Err(Error::IndexOutOfRange { index: rep.index, len: n });
    }
    if !rep.ghost.is_compatible(data.prototype()) {
        return Err(Error::VariantMismatch);
    }
    Ok(())
}

/// Runs all `R` rounds. The output hypothesis is [`Trajectory::final_model`].
pub fn run_flsgd(data: &FederatedDataset, cfg: &RunConfig) -> Result<Trajectory> {
    run_flsgd_with_noise(data, cfg, &cfg.noise_stream())
}

/// [`run_flsgd`] with an explicit noise stream (only read when `σ_ξ > 0`).
pub fn run_flsgd_with_noise(data: &FederatedDataset, cfg: &RunConfig, noise: &RngStream) -> Result<Trajectory> {
    run_view(DataView::plain(data), cfg, cfg.rounds(), cfg.retention, noise)
}

/// Reference implementation: FL-SGD on the dataset with `rep` applied.
pub fn run_flsgd_replaced(data: &FederatedDataset, rep: &Replacement, cfg: &RunConfig) -> Result<Trajectory> {
    let replaced = data.replaced(rep)?;
    run_flsgd(&replaced, cfg)
}

/// Same result as [`run_flsgd_replaced`], bit for bit, reusing every iterate
/// of `base` that precedes the replaced sample's step.
pub fn replay_from_divergence(
    base: &Trajectory,
    data: &FederatedDataset,
    rep: &Replacement,
    cfg: &RunConfig,
) -> Result<Trajectory> {
    replay_with_noise(base, data, rep, cfg, &cfg.noise_stream())
}

pub fn replay_with_noise(
    base: &Trajectory,
    data: &FederatedDataset,
    rep: &Replacement,
    cfg: &RunConfig,
    noise: &RngStream,
) -> Result<Trajectory> {
    if base.retention != Retention::Full || base.rounds != cfg.rounds() {
        return Err(Error::RetentionInsufficient);
    }
    cfg.check_data(data)?;
    check_replacement(data, rep)?;
    if rep.ghost.bitwise_eq(data.sample(rep.client, rep.index)) {
        return Ok(base.clone());
    }
    let tau = cfg.steps();
    let r_star = (rep.index - 1) / tau + 1;
    let t_star = (rep.index - 1) % tau + 1;
    let view = DataView { data, rep: Some(rep) };

    let mut traj = base.clone();
    let start = traj.round_start(cfg, r_star);
    traj.compute_client_round(view, cfg, noise, rep.client, r_star, &start, t_star)?;
    traj.aggregate_round(cfg, r_star);
    traj.run_rounds_from(view, cfg, noise, r_star + 1)?;
    Ok(traj)
}

/// `W_{k∖i}^{(r,τ)}`: client `k`'s round-end model in the round containing
/// sample `i` when that sample is swapped for `ghost`. Only that client's
/// steps from the replaced one onward are recomputed.
pub(crate) fn replaced_round_end(
    base: &Trajectory,
    data: &FederatedDataset,
    cfg: &RunConfig,
    k: usize,
    i: usize,
    ghost: &Sample,
    noise: &RngStream,
) -> Result<Vec<f64>> {
    let tau = cfg.steps();
    let r = (i - 1) / tau + 1;
    let t_star = (i - 1) % tau + 1;
    let mut w = base.iterate(k, r, t_star - 1)?.to_vec();
    let p = w.len();
    let xi = (cfg.noise_sigma > 0.0)
        .then(|| gaussian_noise(&client_round_stream(noise, k, r), tau * p, cfg.noise_sigma));
    let rates = cfg.schedule.round_rates(r);
    for t in t_star..=tau {
        let idx = (r - 1) * tau + t;
        let z = if idx == i { ghost } else { data.sample(k, idx) };
        cfg.loss.sgd_step(z, &mut w, rates[t - 1]);
        if let Some(xi) = &xi {
            for (a, e) in w.iter_mut().zip(&xi[(t - 1) * p..t * p]) {
                *a += e;
            }
        }
        if !w.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteIterate { client: k, round: r, step: t });
        }
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{partition_rounds, ClientDataset, Schedule};
    use rand::Rng;

    const SCALAR: LossFamily = LossFamily::SquaredLocation { dim: 1 };

    fn loc(v: f64) -> Sample {
        Sample::location(vec![v])
    }

    fn scalar_data(clients: &[&[f64]]) -> FederatedDataset {
        FederatedDataset::new(
            clients
                .iter()
                .map(|c| ClientDataset::new(c.iter().map(|&v| loc(v)).collect()).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_step_by_hand() {
        let d = ClientDataset::new(vec![loc(1.0)]).unwrap();
        let blocks = partition_rounds(&d, 1).unwrap();
        let (w, its) = local_sgd_round(&Model(vec![0.0]), &blocks[0], &[0.25], &SCALAR, None).unwrap();
        assert_eq!(w.0, vec![0.5]);
        assert_eq!(its.len(), 1);
    }

    #[test]
    fn half_rate_lands_on_each_sample() {
        let d = ClientDataset::new(vec![loc(3.0), loc(-2.0), loc(7.5)]).unwrap();
        let blocks = partition_rounds(&d, 1).unwrap();
        let (_, its) = local_sgd_round(&Model(vec![10.0]), &blocks[0], &[0.5; 3], &SCALAR, None).unwrap();
        let got: Vec<f64> = its.iter().map(|m| m[0]).collect();
        assert_eq!(got, vec![3.0, -2.0, 7.5]);
    }

    #[test]
    fn zero_rates_leave_model_unchanged() {
        let d = ClientDataset::new(vec![loc(3.0), loc(-2.0)]).unwrap();
        let blocks = partition_rounds(&d, 1).unwrap();
        let (w, _) = local_sgd_round(&Model(vec![1.25]), &blocks[0], &[0.0, 0.0], &SCALAR, None).unwrap();
        assert_eq!(w.0, vec![1.25]);
    }

    #[test]
    fn divergent_rate_is_an_error() {
        let d = ClientDataset::new(vec![loc(1.0); 2000]).unwrap();
        let blocks = partition_rounds(&d, 1).unwrap();
        let err = local_sgd_round(&Model(vec![0.0]), &blocks[0], &[5.0; 2000], &SCALAR, None).unwrap_err();
        assert!(matches!(err, Error::NonFiniteIterate { .. }));
    }

    #[test]
    fn aggregate_mean() {
        let m = aggregate(&[Model(vec![0.0, 0.0]), Model(vec![2.0, 4.0])]).unwrap();
        assert_eq!(m.0, vec![1.0, 2.0]);
        let same = Model(vec![0.1, 0.7, -3.0]);
        let avg = aggregate(&[same.clone(), same.clone(), same.clone()]).unwrap();
        for (a, b) in avg.iter().zip(same.iter()) {
            assert!((a - b).abs() <= 1e-15);
        }
        assert_eq!(aggregate(&[]), Err(Error::EmptyList));
        assert!(matches!(
            aggregate(&[Model(vec![0.0]), Model(vec![0.0, 1.0])]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn two_client_two_round_by_hand() {
        let data = scalar_data(&[&[1.0, 3.0], &[5.0, 7.0]]);
        let cfg = RunConfig::new(2, 2, 2, 0.5, SCALAR).unwrap();
        let traj = run_flsgd(&data, &cfg).unwrap();
        assert_eq!(traj.aggregate(1).unwrap().0, vec![3.0]);
        assert_eq!(traj.aggregate(2).unwrap().0, vec![5.0]);
        assert_eq!(traj.final_model().0, vec![5.0]);
    }

    #[test]
    fn one_round_is_mean_of_independent_runs() {
        let data = scalar_data(&[&[1.0, 2.0, 0.5], &[-1.0, 4.0, 2.0]]);
        let cfg = RunConfig::new(3, 2, 1, 0.1, SCALAR).unwrap();
        let traj = run_flsgd(&data, &cfg).unwrap();
        assert_eq!(traj.aggregates().len(), 1);
        let solo: Vec<Model> = data
            .clients()
            .iter()
            .map(|c| centralized_sgd(&cfg.w0, c.samples(), &[0.1; 3], &SCALAR).unwrap())
            .collect();
        assert!(traj.final_model().bitwise_eq(&aggregate(&solo).unwrap()));
    }

    #[test]
    fn centralized_by_hand() {
        let w = centralized_sgd(&Model(vec![0.0]), &[loc(1.0), loc(0.0)], &[0.25, 0.25], &SCALAR).unwrap();
        assert_eq!(w.0, vec![0.25]);
        let w0 = Model(vec![0.3]);
        assert_eq!(centralized_sgd(&w0, &[], &[], &SCALAR).unwrap(), w0);
    }

    #[test]
    fn centralized_equals_local_round() {
        let d = ClientDataset::new(vec![loc(0.3), loc(-1.1), loc(2.2), loc(0.0)]).unwrap();
        let blocks = partition_rounds(&d, 2).unwrap();
        let rates = [0.1, 0.2];
        let w0 = Model(vec![0.7]);
        let (a, _) = local_sgd_round(&w0, &blocks[1], &rates, &SCALAR, None).unwrap();
        let b = centralized_sgd(&w0, blocks[1].samples, &rates, &SCALAR).unwrap();
        assert!(a.bitwise_eq(&b));
    }

    fn random_instance(rng: &mut impl Rng, dim: usize) -> (FederatedDataset, RunConfig) {
        let k = rng.random_range(1..=3);
        let r = rng.random_range(1..=3);
        let tau = rng.random_range(1..=4);
        let n = r * tau;
        let samples = (0..n * k)
            .map(|_| Sample::Location((0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()))
            .collect();
        let data = FederatedDataset::from_flat(samples, k).unwrap();
        let table = (0..r).map(|_| (0..tau).map(|_| rng.random_range(0.01..0.45)).collect()).collect();
        let cfg = RunConfig::with_schedule(n, k, Schedule::from_table(table).unwrap(), LossFamily::SquaredLocation { dim })
            .unwrap()
            .with_w0(Model((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()));
        (data, cfg)
    }

    #[test]
    fn stored_trajectory_satisfies_broadcast_and_mean() {
        let mut rng = RngStream::derive(9, "engine-invariants", 0).rng();
        for _ in 0..100 {
            let (data, cfg) = random_instance(&mut rng, 2);
            let traj = run_flsgd(&data, &cfg).unwrap();
            for r in 1..=cfg.rounds() {
                let ends: Vec<Model> =
                    (1..=cfg.clients).map(|k| Model(traj.round_end(k, r).unwrap().to_vec())).collect();
                assert!(traj.aggregate(r).unwrap().bitwise_eq(&aggregate(&ends).unwrap()));
                for k in 1..=cfg.clients {
                    let start = traj.iterate(k, r, 0).unwrap();
                    let expected = if r == 1 { &cfg.w0 } else { traj.aggregate(r - 1).unwrap() };
                    assert!(Model(start.to_vec()).bitwise_eq(expected));
                    assert_eq!(traj.iterate(k, r, cfg.steps()).unwrap(), traj.round_end(k, r).unwrap());
                }
            }
        }
    }

    #[test]
    fn deterministic_runs() {
        let mut rng = RngStream::derive(10, "engine-det", 0).rng();
        let (data, cfg) = random_instance(&mut rng, 3);
        let a = run_flsgd(&data, &cfg).unwrap();
        let b = run_flsgd(&data, &cfg).unwrap();
        assert!(a.bitwise_eq(&b));
        let noisy = cfg.clone().with_noise(0.1);
        let a = run_flsgd(&data, &noisy).unwrap();
        let b = run_flsgd(&data, &noisy).unwrap();
        assert!(a.bitwise_eq(&b));
        assert!(!a.bitwise_eq(&run_flsgd(&data, &cfg).unwrap()));
    }

    #[test]
    fn noisy_client_round_matches_local_sgd_round() {
        let data = scalar_data(&[&[1.0, 2.0, 0.5, 0.1], &[-1.0, 4.0, 2.0, 0.0]]);
        let cfg = RunConfig::new(4, 2, 2, 0.1, SCALAR).unwrap().with_noise(0.3);
        let traj = run_flsgd(&data, &cfg).unwrap();
        let blocks = partition_rounds(data.client(2).unwrap(), 2).unwrap();
        let stream = client_round_stream(&cfg.noise_stream(), 2, 2);
        let (w, _) = local_sgd_round(
            traj.aggregate(1).unwrap(),
            &blocks[1],
            cfg.schedule.round_rates(2),
            &SCALAR,
            Some((&stream, 0.3)),
        )
        .unwrap();
        assert_eq!(w.0.as_slice(), traj.round_end(2, 2).unwrap());
    }

    #[test]
    fn replacement_identity_and_prefix() {
        let data = scalar_data(&[&[1.0, 2.0, 3.0, 4.0], &[0.5, -0.5, 1.5, 2.5]]);
        let cfg = RunConfig::new(4, 2, 2, 0.2, SCALAR).unwrap();
        let base = run_flsgd(&data, &cfg).unwrap();

        let same = Replacement::new(1, 3, loc(3.0));
        assert!(run_flsgd_replaced(&data, &same, &cfg).unwrap().bitwise_eq(&base));
        assert!(replay_from_divergence(&base, &data, &same, &cfg).unwrap().bitwise_eq(&base));

        // Index 3 lives in round 2: round 1 untouched.
        let rep = Replacement::new(1, 3, loc(-9.0));
        let alt = run_flsgd_replaced(&data, &rep, &cfg).unwrap();
        assert!(alt.aggregate(1).unwrap().bitwise_eq(base.aggregate(1).unwrap()));
        for k in 1..=2 {
            for t in 0..=2 {
                assert_eq!(alt.iterate(k, 1, t).unwrap(), base.iterate(k, 1, t).unwrap());
            }
        }
        assert!(!alt.final_model().bitwise_eq(base.final_model()));
    }

    #[test]
    fn one_round_replacement_leaves_other_clients_alone() {
        let data = scalar_data(&[&[1.0, 2.0], &[0.5, -0.5]]);
        let cfg = RunConfig::new(2, 2, 1, 0.2, SCALAR).unwrap();
        let base = run_flsgd(&data, &cfg).unwrap();
        let alt = run_flsgd_replaced(&data, &Replacement::new(1, 1, loc(4.0)), &cfg).unwrap();
        for t in 0..=2 {
            assert_eq!(alt.iterate(2, 1, t).unwrap(), base.iterate(2, 1, t).unwrap());
        }
    }

    #[test]
    fn replay_requires_full_retention() {
        let data = scalar_data(&[&[1.0, 2.0]]);
        let cfg = RunConfig::new(2, 1, 2, 0.2, SCALAR).unwrap().with_retention(Retention::AggregatesOnly);
        let base = run_flsgd(&data, &cfg).unwrap();
        let rep = Replacement::new(1, 1, loc(0.0));
        assert_eq!(replay_from_divergence(&base, &data, &rep, &cfg), Err(Error::RetentionInsufficient));
        assert_eq!(base.iterate(1, 1, 0), Err(Error::RetentionInsufficient));
    }

    #[test]
    fn final_round_replay_touches_only_that_client() {
        let data = scalar_data(&[&[1.0, 2.0, 3.0], &[0.5, -0.5, 1.5]]);
        let cfg = RunConfig::new(3, 2, 3, 0.2, SCALAR).unwrap();
        let base = run_flsgd(&data, &cfg).unwrap();
        let replay = replay_from_divergence(&base, &data, &Replacement::new(2, 3, loc(8.0)), &cfg).unwrap();
        for r in 1..=3 {
            assert_eq!(replay.round_end(1, r).unwrap(), base.round_end(1, r).unwrap());
        }
        for r in 1..=2 {
            assert_eq!(replay.round_end(2, r).unwrap(), base.round_end(2, r).unwrap());
            assert!(replay.aggregate(r).unwrap().bitwise_eq(base.aggregate(r).unwrap()));
        }
        assert_ne!(replay.round_end(2, 3).unwrap(), base.round_end(2, 3).unwrap());
    }

    #[test]
    fn replay_matches_reference_on_random_instances() {
        let mut rng = RngStream::derive(11, "replay", 0).rng();
        for trial in 0..100 {
            let (data, mut cfg) = random_instance(&mut rng, 1 + trial % 2);
            if trial % 3 == 0 {
                cfg = cfg.with_noise(0.05);
            }
            let base = run_flsgd(&data, &cfg).unwrap();
            let k = rng.random_range(1..=cfg.clients);
            let i = rng.random_range(1..=cfg.n);
            let ghost = Sample::Location((0..cfg.loss.dim()).map(|_| rng.random_range(-2.0..2.0)).collect());
            let rep = Replacement::new(k, i, ghost.clone());
            let reference = run_flsgd_replaced(&data, &rep, &cfg).unwrap();
            let replay = replay_from_divergence(&base, &data, &rep, &cfg).unwrap();
            assert!(replay.bitwise_eq(&reference), "trial {trial}");
            let r = (i - 1) / cfg.steps() + 1;
            let end = replaced_round_end(&base, &data, &cfg, k, i, &ghost, &cfg.noise_stream()).unwrap();
            assert_eq!(end.as_slice(), reference.round_end(k, r).unwrap());
        }
    }

    #[test]
    fn divergence_grows_at_most_by_one_plus_l_eta() {
        let mut rng = RngStream::derive(12, "recursion", 0).rng();
        for _ in 0..100 {
            let (data, cfg) = random_instance(&mut rng, 2);
            let base = run_flsgd(&data, &cfg).unwrap();
            let k = rng.random_range(1..=cfg.clients);
            let i = rng.random_range(1..=cfg.n);
            let rep = Replacement::new(k, i, Sample::Location(vec![rng.random_range(-2.0..2.0), 1.0]));
            let alt = replay_from_divergence(&base, &data, &rep, &cfg).unwrap();
            let l = cfg.smoothness_constant();
            let r_star = (i - 1) / cfg.steps() + 1;
            for r in r_star + 1..=cfg.rounds() {
                for j in 1..=cfg.clients {
                    for t in 1..=cfg.steps() {
                        let before = crate::model::distance(alt.iterate(j, r, t - 1).unwrap(), base.iterate(j, r, t - 1).unwrap());
                        let after = crate::model::distance(alt.iterate(j, r, t).unwrap(), base.iterate(j, r, t).unwrap());
                        assert!(after <= (1.0 + l * cfg.schedule.rate(r, t)) * before + 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn one_epoch_per_client() {
        // Every sample of every client is visited exactly once: perturbing any
        // single sample changes the final model, and a run touches n steps.
        let data = scalar_data(&[&[1.0, 2.0, 3.0, 4.0], &[0.5, -0.5, 1.5, 2.5]]);
        let cfg = RunConfig::new(4, 2, 2, 0.2, SCALAR).unwrap();
        let traj = run_flsgd(&data, &cfg).unwrap();
        assert_eq!(traj.rounds() * traj.steps(), cfg.n);
        for k in 1..=2 {
            for i in 1..=4 {
                let alt = run_flsgd_replaced(&data, &Replacement::new(k, i, loc(100.0)), &cfg).unwrap();
                assert!(!alt.final_model().bitwise_eq(traj.final_model()));
            }
        }
    }
}
