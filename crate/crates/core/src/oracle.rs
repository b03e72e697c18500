//! Exact expectations by exhaustive enumeration over finite-support data.
//!
//! Every realization of the dataset (and, where needed, of one ghost
//! sample) is visited in lexicographic order and weighted by its
//! probability. The realization space is split into a fixed number of
//! contiguous partitions summed in parallel and merged in partition order,
//! so results do not depend on the thread count.
//!
//! Checks that involve a replaced sample enumerate `(S, z̃)` with a single
//! ghost: for a fixed position `(k, i)` only `z̃_k^{(i)}` enters, and the
//! other ghosts integrate out.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bound::b_coefficient;
use crate::datagen::FiniteDistribution;
use crate::engine::{centralized_sgd, replay_from_divergence, run_flsgd, run_view, DataView, Trajectory};
use crate::error::{Error, Result};
use crate::loss::LossFamily;
use crate::model::{distance, dot, FederatedDataset, Model, Replacement, Retention, RunConfig, Sample, Schedule};
use crate::rng::RngStream;

/// Largest number of realizations a single enumeration may visit.
pub const ENUMERATION_GUARD: f64 = 1e6;
/// Tolerance for identities (`|lhs − rhs|`) and inequalities (`rhs − lhs`).
pub const ORACLE_TOLERANCE: f64 = 1e-10;

const PARTITIONS: u64 = 64;

/// Shape of an enumerated dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnumShape {
    pub n: usize,
    pub clients: usize,
    /// Also enumerate a full ghost dataset `S′` of the same shape.
    pub ghosts: bool,
}

fn check_guard(support: usize, len: usize) -> Result<u64> {
    let configurations = (support as f64).powi(len as i32);
    if configurations > ENUMERATION_GUARD {
        return Err(Error::TooLarge { configurations, guard: ENUMERATION_GUARD });
    }
    Ok((support as u64).pow(len as u32))
}

fn decode(mut index: u64, base: u64, digits: &mut [usize]) {
    for d in digits.iter_mut().rev() {
        *d = (index % base) as usize;
        index /= base;
    }
}

fn increment(digits: &mut [usize], base: usize) {
    for d in digits.iter_mut().rev() {
        *d += 1;
        if *d < base {
            return;
        }
        *d = 0;
    }
}

/// `Σ_c P(c) f(c)` over all `|probs|^len` index vectors, vector-valued.
fn enumerate_vec<F>(probs: &[f64], len: usize, out_len: usize, f: F) -> Result<Vec<f64>>
where
    F: Fn(&[usize], &mut [f64]) + Sync,
{
    let total = check_guard(probs.len(), len)?;
    let base = probs.len() as u64;
    let chunk = total.div_ceil(PARTITIONS);
    let partials: Vec<Vec<f64>> = (0..PARTITIONS)
        .into_par_iter()
        .map(|p| {
            let lo = (p * chunk).min(total);
            let hi = (lo + chunk).min(total);
            let mut acc = vec![0.0; out_len];
            let mut digits = vec![0usize; len];
            let mut buf = vec![0.0; out_len];
            decode(lo, base, &mut digits);
            for _ in lo..hi {
                let weight: f64 = digits.iter().map(|&d| probs[d]).product();
                buf.iter_mut().for_each(|v| *v = 0.0);
                f(&digits, &mut buf);
                for (a, v) in acc.iter_mut().zip(&buf) {
                    *a += weight * v;
                }
                increment(&mut digits, probs.len());
            }
            acc
        })
        .collect();
    let mut out = vec![0.0; out_len];
    for part in &partials {
        for (o, v) in out.iter_mut().zip(part) {
            *o += v;
        }
    }
    Ok(out)
}

/// Visits every index vector in lexicographic order with its probability.
fn for_each_realization(probs: &[f64], len: usize, mut f: impl FnMut(&[usize], f64)) -> Result<()> {
    let total = check_guard(probs.len(), len)?;
    let mut digits = vec![0usize; len];
    for _ in 0..total {
        let weight: f64 = digits.iter().map(|&d| probs[d]).product();
        f(&digits, weight);
        increment(&mut digits, probs.len());
    }
    Ok(())
}

/// Exact `E[functional(S, S′)]` with `S ~ μ^{⊗nK}` (client-major) and, when
/// `shape.ghosts`, an independent `S′` of the same shape.
pub fn enumerate_expectation<F>(mu: &FiniteDistribution, shape: EnumShape, functional: F) -> Result<f64>
where
    F: Fn(&FederatedDataset, Option<&FederatedDataset>) -> f64 + Sync,
{
    let m = shape.n * shape.clients;
    if m == 0 {
        return Err(Error::WrongShape("n and K must be at least 1".into()));
    }
    let len = if shape.ghosts { 2 * m } else { m };
    let build = |digits: &[usize]| {
        FederatedDataset::from_flat(digits.iter().map(|&d| mu.support()[d].clone()).collect(), shape.clients)
            .expect("support points are compatible")
    };
    let out = enumerate_vec(mu.probs(), len, 1, |digits, out| {
        let s = build(&digits[..m]);
        let ghosts = shape.ghosts.then(|| build(&digits[m..]));
        out[0] = functional(&s, ghosts.as_ref());
    })?;
    Ok(out[0])
}

/// A small FL-SGD instance over a finite location distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSetup {
    pub dist: FiniteDistribution,
    pub clients: usize,
    pub n: usize,
    pub schedule: Schedule,
    pub w0: Model,
    /// Overrides `L = 2` in the bound.
    pub smoothness: Option<f64>,
    #[doc(hidden)]
    #[serde(default, skip_serializing_if = "is_zero")]
    pub aggregation_skew: f64,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

impl OracleSetup {
    pub fn new(dist: FiniteDistribution, clients: usize, n: usize, schedule: Schedule) -> Result<Self> {
        let Sample::Location(z) = &dist.support()[0] else {
            return Err(Error::WrongShape("oracle checks use squared-location samples".into()));
        };
        let setup = OracleSetup { w0: Model::zeros(z.len()), dist, clients, n, schedule, smoothness: None, aggregation_skew: 0.0 };
        setup.run_config()?;
        Ok(setup)
    }

    pub fn with_w0(mut self, w0: Model) -> Self {
        self.w0 = w0;
        self
    }

    /// `K = 2`, `n = 1`, `R = 1`, `η = 0.5`, `μ = uniform{0, 1}`, `w0 = 0`.
    pub fn tiny() -> Self {
        let dist = FiniteDistribution::uniform(vec![Sample::location(vec![0.0]), Sample::location(vec![1.0])])
            .expect("valid distribution");
        OracleSetup::new(dist, 2, 1, Schedule::constant(1, 1, 0.5).expect("valid schedule")).expect("valid setup")
    }

    pub fn family(&self) -> LossFamily {
        LossFamily::SquaredLocation { dim: self.dist.support()[0].dim() }
    }

    pub fn rounds(&self) -> usize {
        self.schedule.rounds()
    }

    pub fn steps(&self) -> usize {
        self.schedule.steps()
    }

    pub fn smoothness_constant(&self) -> f64 {
        self.smoothness.unwrap_or_else(|| self.family().smoothness_constant())
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::with_schedule(self.n, self.clients, self.schedule.clone(), self.family())?.with_w0(self.w0.clone());
        if let Some(l) = self.smoothness {
            cfg = cfg.with_smoothness(l);
        }
        cfg.aggregation_skew = self.aggregation_skew;
        cfg.validate()?;
        Ok(cfg)
    }

    fn population_risk(&self, w: &[f64]) -> f64 {
        let fam = self.family();
        self.dist.expectation(|z| fam.loss_unchecked(z, w))
    }

    fn sample(&self, d: usize) -> Sample {
        self.dist.support()[d].clone()
    }

    fn dataset(&self, digits: &[usize]) -> FederatedDataset {
        FederatedDataset::from_flat(digits.iter().map(|&d| self.sample(d)).collect(), self.clients)
            .expect("support points are compatible")
    }

    /// Number of `(S, z̃)` realizations with a single ghost.
    pub fn ghost_realizations(&self) -> f64 {
        (self.dist.len() as f64).powi((self.n * self.clients + 1) as i32)
    }
}

/// `gen(D, w)` with exact population risk, empirical risk over `samples`.
fn gen_on(setup: &OracleSetup, samples: &[Sample], w: &[f64]) -> f64 {
    let fam = setup.family();
    setup.population_risk(w) - crate::risk::running_mean(samples.iter().map(|z| fam.loss_unchecked(z, w)))
}

/// `V_u^{(q)} = Σ_t η_{q,t} ∇ℓ(z_u^{((q−1)τ+t)}, W_u^{(q,t−1)})`.
pub fn innovation(
    traj: &Trajectory,
    u: usize,
    q: usize,
    schedule: &Schedule,
    family: &LossFamily,
    data: &FederatedDataset,
) -> Result<Vec<f64>> {
    let tau = schedule.steps();
    let mut v = vec![0.0; family.dim()];
    let mut g = vec![0.0; family.dim()];
    for t in 1..=tau {
        let w = traj.iterate(u, q, t - 1)?;
        family.grad_into(data.sample(u, (q - 1) * tau + t), w, &mut g);
        let eta = schedule.rate(q, t);
        for (a, b) in v.iter_mut().zip(&g) {
            *a += eta * b;
        }
    }
    Ok(v)
}

/// One `(S, z̃)` realization with its base trajectory.
struct GhostRealization<'a> {
    setup: &'a OracleSetup,
    cfg: &'a RunConfig,
    data: FederatedDataset,
    ghost: Sample,
    base: Trajectory,
}

impl GhostRealization<'_> {
    /// Dataset and trajectory with `z_k^{(i)}` replaced by the ghost.
    fn replaced(&self, k: usize, i: usize) -> (FederatedDataset, Trajectory) {
        let rep = Replacement::new(k, i, self.ghost.clone());
        let data = self.data.replaced(&rep).expect("valid replacement");
        let traj = replay_from_divergence(&self.base, &self.data, &rep, self.cfg).expect("replay succeeds");
        (data, traj)
    }

    fn g(&self) -> Vec<f64> {
        self.setup.family().potential_grad_at_sample(&self.ghost).expect("location sample")
    }

    fn innovation(&self, traj: &Trajectory, data: &FederatedDataset, u: usize, q: usize) -> Vec<f64> {
        innovation(traj, u, q, &self.setup.schedule, &self.setup.family(), data).expect("full retention")
    }
}

fn ghost_expectation<F>(setup: &OracleSetup, out_len: usize, f: F) -> Result<Vec<f64>>
where
    F: Fn(&GhostRealization<'_>, &mut [f64]) + Sync,
{
    let cfg = setup.run_config()?.with_retention(Retention::Full);
    let m = setup.n * setup.clients;
    enumerate_vec(setup.dist.probs(), m + 1, out_len, |digits, out| {
        let data = setup.dataset(&digits[..m]);
        let base = run_flsgd(&data, &cfg).expect("finite iterates");
        let real = GhostRealization { setup, cfg: &cfg, data, ghost: setup.sample(digits[m]), base };
        f(&real, out);
    })
}

/// `E_S[gen(S, W̄^{(R)})]`.
pub fn exact_expected_gen(setup: &OracleSetup) -> Result<f64> {
    let cfg = setup.run_config()?.with_retention(Retention::AggregatesOnly);
    let m = setup.n * setup.clients;
    let out = enumerate_vec(setup.dist.probs(), m, 1, |digits, out| {
        let data = setup.dataset(digits);
        let traj = run_flsgd(&data, &cfg).expect("finite iterates");
        let samples: Vec<Sample> = data.iter_samples().cloned().collect();
        out[0] = gen_on(setup, &samples, traj.final_model());
    })?;
    Ok(out[0])
}

/// Every possible `W̄^{(rounds)}` with its probability, over the data of rounds `1..=rounds`.
fn prior_aggregates(setup: &OracleSetup, rounds: usize) -> Result<Vec<(f64, Model)>> {
    let cfg = setup.run_config()?;
    let (k, n, tau) = (setup.clients, setup.n, setup.steps());
    let used = rounds * tau;
    let mut out = Vec::new();
    for_each_realization(setup.dist.probs(), k * used, |digits, weight| {
        let mut flat = Vec::with_capacity(k * n);
        for c in 0..k {
            flat.extend(digits[c * used..(c + 1) * used].iter().map(|&d| setup.sample(d)));
            flat.extend((used..n).map(|_| setup.sample(0)));
        }
        let data = FederatedDataset::from_flat(flat, k).expect("compatible");
        let traj = run_view(DataView::plain(&data), &cfg, rounds, Retention::AggregatesOnly, &cfg.noise_stream())
            .expect("finite iterates");
        out.push((weight, traj.final_model().clone()));
    })?;
    Ok(out)
}

/// `A′(r−1, D)`, exactly: centralized SGD over `D` from `W̄^{(r−1)}`, averaged
/// over the prior-round data.
fn a_prime_exact(setup: &OracleSetup, r: usize, block: &[Sample], prior: &[(f64, Model)]) -> Vec<f64> {
    let fam = setup.family();
    let rates = setup.schedule.round_rates(r);
    if r == 1 {
        return centralized_sgd(&setup.w0, block, rates, &fam).expect("finite").into_inner();
    }
    let mut acc = vec![0.0; fam.dim()];
    for (p, start) in prior {
        let w = centralized_sgd(start, block, rates, &fam).expect("finite");
        for (a, v) in acc.iter_mut().zip(w.iter()) {
            *a += p * v;
        }
    }
    acc
}

/// `E_{S_{k,r}}[gen(S_{k,r}, A′(r−1, S_{k,r}))]`; identical for every client.
fn exact_block_gen(setup: &OracleSetup, r: usize) -> Result<f64> {
    let prior = if r > 1 { prior_aggregates(setup, r - 1)? } else { Vec::new() };
    let tau = setup.steps();
    let out = enumerate_vec(setup.dist.probs(), tau, 1, |digits, out| {
        let block: Vec<Sample> = digits.iter().map(|&d| setup.sample(d)).collect();
        let w = a_prime_exact(setup, r, &block, &prior);
        out[0] = gen_on(setup, &block, &w);
    })?;
    Ok(out[0])
}

/// First term of the bound, exactly.
pub fn exact_term1(setup: &OracleSetup) -> Result<f64> {
    let (rounds, k) = (setup.rounds(), setup.clients);
    let mut sum = 0.0;
    for r in 1..=rounds {
        sum += k as f64 * exact_block_gen(setup, r)?;
    }
    Ok(sum / (rounds * k * k) as f64)
}

/// Second term of the bound, exactly (full expectation over `S` and the ghost).
pub fn exact_term2(setup: &OracleSetup) -> Result<f64> {
    let (rounds, k, n, tau) = (setup.rounds(), setup.clients, setup.n, setup.steps());
    if rounds == 1 {
        return Ok(0.0);
    }
    let l = setup.smoothness_constant();
    let raw = ghost_expectation(setup, rounds - 1, |real, out| {
        let gnorm = setup.family().potential_grad_norm(&real.ghost);
        for r in 1..rounds {
            for c in 1..=k {
                for i in (r - 1) * tau + 1..=r * tau {
                    let (_, alt) = real.replaced(c, i);
                    out[r - 1] += gnorm * distance(alt.round_end(c, r).unwrap(), real.base.round_end(c, r).unwrap());
                }
            }
        }
    })?;
    Ok((1..rounds)
        .map(|r| l * b_coefficient(&setup.schedule, r, l) / (n * k * k) as f64 * raw[r - 1])
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Identity {
    LeaveOneOut,
    DecompR2,
    TermA,
    TermB2,
    CorollaryOneShot,
    CqZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Inequality {
    TermB1,
    Theorem,
}

impl Identity {
    pub const ALL: [Identity; 6] = [
        Identity::LeaveOneOut,
        Identity::DecompR2,
        Identity::TermA,
        Identity::TermB2,
        Identity::CorollaryOneShot,
        Identity::CqZero,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Identity::LeaveOneOut => "leave_one_out",
            Identity::DecompR2 => "decomp_r2",
            Identity::TermA => "term_a",
            Identity::TermB2 => "term_b2",
            Identity::CorollaryOneShot => "corollary_one_shot",
            Identity::CqZero => "cq_zero",
        }
    }

    /// Rounds the check is defined for, if restricted.
    pub fn required_rounds(&self) -> Option<usize> {
        match self {
            Identity::DecompR2 | Identity::TermA | Identity::TermB2 => Some(2),
            Identity::CorollaryOneShot => Some(1),
            Identity::LeaveOneOut | Identity::CqZero => None,
        }
    }
}

impl Inequality {
    pub const ALL: [Inequality; 2] = [Inequality::TermB1, Inequality::Theorem];

    pub fn name(&self) -> &'static str {
        match self {
            Inequality::TermB1 => "term_b1",
            Inequality::Theorem => "theorem",
        }
    }

    pub fn required_rounds(&self) -> Option<usize> {
        match self {
            Inequality::TermB1 => Some(2),
            Inequality::Theorem => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Identity,
    Inequality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub check: String,
    pub kind: CheckKind,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs − lhs`.
    pub slack: f64,
    /// Per-client or per-sample `(lhs, rhs)` pairs the check also holds for.
    pub components: Vec<(f64, f64)>,
}

impl OracleReport {
    fn new(check: &str, kind: CheckKind, lhs: f64, rhs: f64, components: Vec<(f64, f64)>) -> Self {
        OracleReport { check: check.to_string(), kind, lhs, rhs, slack: rhs - lhs, components }
    }

    pub fn passes(&self) -> bool {
        let ok = |l: f64, r: f64| match self.kind {
            CheckKind::Identity => (l - r).abs() <= ORACLE_TOLERANCE,
            CheckKind::Inequality => r - l >= -ORACLE_TOLERANCE,
        };
        ok(self.lhs, self.rhs) && self.components.iter().all(|&(l, r)| ok(l, r))
    }

    /// Worst-case deviation: `max |lhs − rhs|` for identities, `min (rhs − lhs)` for inequalities.
    pub fn worst(&self) -> f64 {
        let all = std::iter::once((self.lhs, self.rhs)).chain(self.components.iter().copied());
        match self.kind {
            CheckKind::Identity => all.map(|(l, r)| (l - r).abs()).fold(0.0, f64::max),
            CheckKind::Inequality => all.map(|(l, r)| r - l).fold(f64::INFINITY, f64::min),
        }
    }
}

fn require_rounds(setup: &OracleSetup, name: &str, rounds: Option<usize>) -> Result<()> {
    match rounds {
        Some(r) if setup.rounds() != r => {
            Err(Error::WrongShape(format!("{name} requires R = {r}, setup has R = {}", setup.rounds())))
        }
        _ => Ok(()),
    }
}

pub fn check_identity(which: Identity, setup: &OracleSetup) -> Result<OracleReport> {
    require_rounds(setup, which.name(), which.required_rounds())?;
    let (k, n, tau) = (setup.clients, setup.n, setup.steps());
    let fam = setup.family();
    let report = |lhs, rhs, comps| Ok(OracleReport::new(which.name(), CheckKind::Identity, lhs, rhs, comps));
    match which {
        Identity::LeaveOneOut => {
            let lhs = exact_expected_gen(setup)?;
            let rhs = ghost_expectation(setup, 1, |real, out| {
                let w = real.base.final_model();
                for c in 1..=k {
                    for i in 1..=n {
                        let (_, alt) = real.replaced(c, i);
                        out[0] += fam.loss_unchecked(&real.ghost, w) - fam.loss_unchecked(&real.ghost, alt.final_model());
                    }
                }
                out[0] /= (n * k) as f64;
            })?[0];
            report(lhs, rhs, Vec::new())
        }
        Identity::DecompR2 => {
            let lhs = exact_expected_gen(setup)?;
            let rhs = ghost_expectation(setup, 1, |real, out| {
                let g = real.g();
                let nk = (n * k) as f64;
                for c in 1..=k {
                    for i in 1..=n {
                        let (alt_data, alt) = real.replaced(c, i);
                        if i <= tau {
                            let diff: Vec<f64> =
                                alt.aggregate(1).unwrap().iter().zip(real.base.aggregate(1).unwrap().iter()).map(|(a, b)| a - b).collect();
                            out[0] += dot(&g, &diff) / nk;
                        }
                        for j in 1..=k {
                            let v = real.innovation(&real.base, &real.data, j, 2);
                            let v_alt = real.innovation(&alt, &alt_data, j, 2);
                            let diff: Vec<f64> = v.iter().zip(&v_alt).map(|(a, b)| a - b).collect();
                            out[0] += dot(&g, &diff) / (nk * k as f64);
                        }
                    }
                }
            })?[0];
            report(lhs, rhs, Vec::new())
        }
        Identity::TermA => {
            let lhs = ghost_expectation(setup, k, |real, out| {
                let g = real.g();
                for c in 1..=k {
                    for i in 1..=tau {
                        let (_, alt) = real.replaced(c, i);
                        let diff: Vec<f64> =
                            alt.round_end(c, 1).unwrap().iter().zip(real.base.round_end(c, 1).unwrap()).map(|(a, b)| a - b).collect();
                        out[c - 1] += dot(&g, &diff) / tau as f64;
                    }
                }
            })?;
            let rhs = exact_block_gen(setup, 1)?;
            let comps: Vec<(f64, f64)> = lhs.iter().map(|&l| (l, rhs)).collect();
            report(lhs.iter().sum(), rhs * k as f64, comps)
        }
        Identity::TermB2 => {
            let lhs = ghost_expectation(setup, k, |real, out| {
                let g = real.g();
                for c in 1..=k {
                    let v = real.innovation(&real.base, &real.data, c, 2);
                    for i in tau + 1..=n {
                        let (alt_data, alt) = real.replaced(c, i);
                        let v_alt = real.innovation(&alt, &alt_data, c, 2);
                        let diff: Vec<f64> = v.iter().zip(&v_alt).map(|(a, b)| a - b).collect();
                        out[c - 1] += dot(&g, &diff) / tau as f64;
                    }
                }
            })?;
            let rhs = exact_block_gen(setup, 2)?;
            let comps: Vec<(f64, f64)> = lhs.iter().map(|&l| (l, rhs)).collect();
            report(lhs.iter().sum(), rhs * k as f64, comps)
        }
        Identity::CorollaryOneShot => {
            let lhs = exact_expected_gen(setup)?;
            let per_client = exact_block_gen(setup, 1)?;
            let rhs = (0..k).map(|_| per_client).sum::<f64>() / (k * k) as f64;
            report(lhs, rhs, Vec::new())
        }
        Identity::CqZero => {
            let lhs = ghost_expectation(setup, 1, |real, out| {
                let g = real.g();
                for c in 1..=k {
                    for i in 1..=n {
                        let r = (i - 1) / tau + 1;
                        if r == 1 {
                            continue;
                        }
                        let (alt_data, alt) = real.replaced(c, i);
                        for q in 1..r {
                            for j in 1..=k {
                                let v = real.innovation(&real.base, &real.data, j, q);
                                let v_alt = real.innovation(&alt, &alt_data, j, q);
                                let diff: Vec<f64> = v.iter().zip(&v_alt).map(|(a, b)| a - b).collect();
                                out[0] += dot(&g, &diff);
                            }
                        }
                    }
                }
            })?[0];
            report(lhs, 0.0, Vec::new())
        }
    }
}

pub fn check_inequality(which: Inequality, setup: &OracleSetup) -> Result<OracleReport> {
    require_rounds(setup, which.name(), which.required_rounds())?;
    match which {
        Inequality::TermB1 => {
            let (k, tau) = (setup.clients, setup.steps());
            let l = setup.smoothness_constant();
            let b2 = b_coefficient(&setup.schedule, 1, l);
            // Layout: [lhs_{k,i} for all (k, i ≤ τ)] then [rhs_{k,i}].
            let pairs = k * tau;
            let vals = ghost_expectation(setup, 2 * pairs, |real, out| {
                let g = real.g();
                let gnorm = setup.family().potential_grad_norm(&real.ghost);
                for c in 1..=k {
                    for i in 1..=tau {
                        let slot = (c - 1) * tau + (i - 1);
                        let (alt_data, alt) = real.replaced(c, i);
                        for j in 1..=k {
                            let v = real.innovation(&real.base, &real.data, j, 2);
                            let v_alt = real.innovation(&alt, &alt_data, j, 2);
                            let diff: Vec<f64> = v.iter().zip(&v_alt).map(|(a, b)| a - b).collect();
                            out[slot] += dot(&g, &diff);
                        }
                        out[pairs + slot] =
                            l * b2 * gnorm * distance(alt.round_end(c, 1).unwrap(), real.base.round_end(c, 1).unwrap());
                    }
                }
            })?;
            let comps: Vec<(f64, f64)> = (0..pairs).map(|s| (vals[s], vals[pairs + s])).collect();
            let lhs = comps.iter().map(|c| c.0).sum();
            let rhs = comps.iter().map(|c| c.1).sum();
            Ok(OracleReport::new(which.name(), CheckKind::Inequality, lhs, rhs, comps))
        }
        Inequality::Theorem => {
            let lhs = exact_expected_gen(setup)?;
            let rhs = exact_term1(setup)? + exact_term2(setup)?;
            Ok(OracleReport::new(which.name(), CheckKind::Inequality, lhs, rhs, Vec::new()))
        }
    }
}

/// Leave-one-out expansion for an arbitrary algorithm `B` on `m` i.i.d. samples:
/// returns `(E gen(D, B(D)), (1/m) Σ_i E[ℓ(z̃_i, B(D)) − ℓ(z̃_i, B(D^{(i)}))])`.
pub fn leave_one_out_generic<B>(dist: &FiniteDistribution, m: usize, family: &LossFamily, algorithm: B) -> Result<OracleReport>
where
    B: Fn(&[Sample]) -> Vec<f64> + Sync,
{
    if m == 0 {
        return Err(Error::WrongShape("m must be at least 1".into()));
    }
    let pop = |w: &[f64]| dist.expectation(|z| family.loss_unchecked(z, w));
    let sample = |digits: &[usize]| -> Vec<Sample> { digits.iter().map(|&d| dist.support()[d].clone()).collect() };
    let lhs = enumerate_vec(dist.probs(), m, 1, |digits, out| {
        let d = sample(digits);
        let w = algorithm(&d);
        let emp = d.iter().map(|z| family.loss_unchecked(z, &w)).sum::<f64>() / m as f64;
        out[0] = pop(&w) - emp;
    })?[0];
    let rhs = enumerate_vec(dist.probs(), m + 1, 1, |digits, out| {
        let d = sample(&digits[..m]);
        let ghost = &dist.support()[digits[m]];
        let w = algorithm(&d);
        for i in 0..m {
            let mut di = d.clone();
            di[i] = ghost.clone();
            out[0] += family.loss_unchecked(ghost, &w) - family.loss_unchecked(ghost, &algorithm(&di));
        }
        out[0] /= m as f64;
    })?[0];
    Ok(OracleReport::new("leave_one_out", CheckKind::Identity, lhs, rhs, Vec::new()))
}

/// The hand case: one sample, `B(D) = z`, uniform `{0, 1}`, squared loss.
pub fn leave_one_out_hand_case() -> OracleReport {
    let dist = FiniteDistribution::uniform(vec![Sample::location(vec![0.0]), Sample::location(vec![1.0])]).expect("valid");
    leave_one_out_generic(&dist, 1, &LossFamily::SquaredLocation { dim: 1 }, |d| match &d[0] {
        Sample::Location(z) => z.clone(),
        Sample::Regression { .. } => unreachable!(),
    })
    .expect("tiny enumeration")
}

/// Deterministic pseudo-random enumerable setups: `count_r1` with one round and
/// `count_r2` with two, over `K ∈ {1,2,3}`, `n ∈ {1,2,4}`, support size `{2,3}`,
/// `d ∈ {1,2}`, uniform and non-uniform probabilities, random rate tables and `w0`.
pub fn random_suite(seed: u64, count_r1: usize, count_r2: usize) -> Vec<OracleSetup> {
    let mut out = Vec::new();
    let (mut have1, mut have2) = (0, 0);
    let mut attempt = 0u64;
    while have1 < count_r1 || have2 < count_r2 {
        let mut rng = RngStream::derive(seed, "oracle-suite", attempt).rng();
        attempt += 1;
        let k = rng.random_range(1..=3usize);
        let n = [1usize, 2, 4][rng.random_range(0..3)];
        let rounds = if n == 1 { 1 } else { rng.random_range(1..=2usize) };
        let need = if rounds == 1 { have1 < count_r1 } else { have2 < count_r2 };
        if !need {
            continue;
        }
        let supp = rng.random_range(2..=3usize);
        let d = rng.random_range(1..=2usize);
        if (supp as f64).powi((n * k + 1) as i32) > ENUMERATION_GUARD {
            continue;
        }
        let support: Vec<Sample> =
            (0..supp).map(|_| Sample::Location((0..d).map(|_| rng.random_range(-2.0..2.0)).collect())).collect();
        let dist = if rng.random_bool(0.5) {
            FiniteDistribution::uniform(support)
        } else {
            let raw: Vec<f64> = (0..supp).map(|_| rng.random_range(0.2..1.0)).collect();
            let total: f64 = raw.iter().sum();
            FiniteDistribution::new(support, raw.iter().map(|v| v / total).collect())
        }
        .expect("valid distribution");
        let tau = n / rounds;
        let table = (0..rounds).map(|_| (0..tau).map(|_| rng.random_range(0.05..0.6)).collect()).collect();
        let w0 = Model((0..d).map(|_| rng.random_range(-1.0..1.0)).collect());
        let setup = OracleSetup::new(dist, k, n, Schedule::from_table(table).expect("valid rates"))
            .expect("valid setup")
            .with_w0(w0);
        if rounds == 1 {
            have1 += 1;
        } else {
            have2 += 1;
        }
        out.push(setup);
    }
    out
}

/// Seed of the suite used by `verify` and the acceptance tests.
pub const SUITE_SEED: u64 = 20_240_601;

/// Every applicable identity check on every setup of the default suite.
pub fn identity_suite(setups: &[OracleSetup]) -> Result<Vec<(usize, OracleReport)>> {
    let mut out = Vec::new();
    for (idx, s) in setups.iter().enumerate() {
        for which in Identity::ALL {
            if which.required_rounds().is_none_or(|r| r == s.rounds()) {
                out.push((idx, check_identity(which, s)?));
            }
        }
    }
    Ok(out)
}

pub fn inequality_suite(setups: &[OracleSetup]) -> Result<Vec<(usize, OracleReport)>> {
    let mut out = Vec::new();
    for (idx, s) in setups.iter().enumerate() {
        for which in Inequality::ALL {
            if which.required_rounds().is_none_or(|r| r == s.rounds()) {
                out.push((idx, check_inequality(which, s)?));
            }
        }
    }
    Ok(out)
}
