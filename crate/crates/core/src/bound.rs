//! Monte-Carlo evaluation of the multi-round generalization bound
//!
//! ```text
//! E gen(S, W̄^{(R)}) ≤ 1/(RK²) Σ_{r,k} E gen(S_{k,r}, A′(r−1, S_{k,r}))
//!                   + Σ_{r<R} L b_{r+1}/(nK²) Σ_{i∈I_r} Σ_k E[‖∇F(Z̃_k^{(i)})‖ ‖W_{k∖i}^{(r,τ)} − W_k^{(r,τ)}‖]
//! ```
//!
//! and of its one-round special case, which holds with equality.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::DataDistribution;
use crate::engine::{aggregate, centralized_sgd, replaced_round_end, run_flsgd_with_noise, run_view, DataView};
use crate::error::{Error, Result};
use crate::model::{distance, Model, Retention, RunConfig, Sample, Schedule};
use crate::risk::{block_risk, draw_dataset, MCEstimate, PopulationOracle};
use crate::rng::RngStream;

/// What `A′(0, S_{k,1})` means in round 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum APrimeRound1 {
    /// `τ` SGD steps from `w0` over the block.
    #[default]
    Trained,
    /// `w0` itself.
    Init,
}

impl APrimeRound1 {
    pub fn id(&self) -> &'static str {
        match self {
            APrimeRound1::Trained => "trained",
            APrimeRound1::Init => "init",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundOptions {
    /// Outer replicates of the first term.
    pub m_outer: usize,
    /// Prior-round datasets averaged into each `A′`.
    pub m_inner: usize,
    /// Replicates of the second term.
    pub m_term2: usize,
    /// Sum every `(k, i)` pair of the second term instead of sampling one per round.
    pub full_term2: bool,
    pub a_prime_r1: APrimeRound1,
    /// Test-set size when the distribution has no closed-form risk.
    pub n_test: usize,
}

impl Default for BoundOptions {
    fn default() -> Self {
        BoundOptions { m_outer: 1000, m_inner: 32, m_term2: 1000, full_term2: false, a_prime_r1: APrimeRound1::Trained, n_test: 1000 }
    }
}

impl BoundOptions {
    fn validate(&self) -> Result<()> {
        if self.m_outer == 0 || self.m_inner == 0 || self.m_term2 == 0 || self.n_test == 0 {
            return Err(Error::InvalidConfig("replicate counts and N_test must be at least 1".into()));
        }
        Ok(())
    }
}

/// `b_{r+1} = Σ_{q=r+1}^{R} Σ_t η_{q,t} Π_{h<t} (1 + L η_{q,h})`; zero for `r ≥ R`.
pub fn b_coefficient(schedule: &Schedule, r: usize, l: f64) -> f64 {
    let mut b = 0.0;
    for q in r + 1..=schedule.rounds() {
        let mut growth = 1.0;
        for &eta in schedule.round_rates(q) {
            b += eta * growth;
            growth *= 1.0 + l * eta;
        }
    }
    b
}

/// `b_2, ..., b_{R+1}`.
pub fn b_coefficients(schedule: &Schedule, l: f64) -> Vec<f64> {
    (1..=schedule.rounds()).map(|r| b_coefficient(schedule, r, l)).collect()
}

/// Which `A′(r−1, S_{k,r})` to build.
#[derive(Debug, Clone, PartialEq)]
pub struct ModifiedSgdSpec<'a> {
    pub round: usize,
    pub client: usize,
    pub m_inner: usize,
    /// The fixed block `S_{k,r}`.
    pub block: &'a [Sample],
}

/// `A′(r−1, S_{k,r})`: centralized SGD over the block, started from `W̄^{(r−1)}`
/// and averaged over `m_inner` fresh draws of the prior-round data. Inner
/// replicate `j` draws its data from `stream.child("inner", j)`.
pub fn modified_sgd_model(
    spec: &ModifiedSgdSpec<'_>,
    cfg: &RunConfig,
    mu: &DataDistribution,
    stream: &RngStream,
    a_prime_r1: APrimeRound1,
) -> Result<Model> {
    let r = spec.round;
    if r == 0 || r > cfg.rounds() {
        return Err(Error::IndexOutOfRange { index: r, len: cfg.rounds() });
    }
    if spec.client == 0 || spec.client > cfg.clients {
        return Err(Error::IndexOutOfRange { index: spec.client, len: cfg.clients });
    }
    if spec.block.len() != cfg.steps() {
        return Err(Error::DimensionMismatch { expected: cfg.steps(), got: spec.block.len() });
    }
    if spec.m_inner == 0 {
        return Err(Error::InvalidConfig("M_inner must be at least 1".into()));
    }
    let rates = cfg.schedule.round_rates(r);
    if r == 1 {
        return match a_prime_r1 {
            APrimeRound1::Trained => centralized_sgd(&cfg.w0, spec.block, rates, &cfg.loss),
            APrimeRound1::Init => Ok(cfg.w0.clone()),
        };
    }
    let pool = inner_pool(cfg, mu, stream, spec.m_inner, r - 1)?;
    let models = pool
        .iter()
        .map(|aggs| centralized_sgd(&aggs[r - 2], spec.block, rates, &cfg.loss))
        .collect::<Result<Vec<_>>>()?;
    aggregate(&models)
}

/// Aggregates `W̄^{(1..rounds)}` of `m_inner` independent FL-SGD runs.
fn inner_pool(cfg: &RunConfig, mu: &DataDistribution, stream: &RngStream, m_inner: usize, rounds: usize) -> Result<Vec<Vec<Model>>> {
    (0..m_inner as u64)
        .map(|j| {
            let data = draw_dataset(mu, cfg, &stream.child("inner", j))?;
            let traj = run_view(DataView::plain(&data), cfg, rounds, Retention::AggregatesOnly, &cfg.noise_stream())?;
            Ok(traj.aggregates().to_vec())
        })
        .collect()
}

/// An estimate together with its per-`(r, k)` parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermEstimate {
    /// Weighted term value.
    pub total: MCEstimate,
    /// Unweighted expectations, indexed `[r-1][k-1]`.
    pub parts: Vec<Vec<MCEstimate>>,
}

fn check_bound_config(cfg: &RunConfig, mu: &DataDistribution) -> Result<()> {
    cfg.validate()?;
    mu.check_family(&cfg.loss)?;
    if cfg.noise_sigma > 0.0 {
        return Err(Error::NoisyRunUnsupported);
    }
    Ok(())
}

/// Per-replicate raw parts `[r][k]` and weighted values, folded into estimates.
fn fold(rows: &[(Vec<Vec<f64>>, f64)]) -> TermEstimate {
    let totals: Vec<f64> = rows.iter().map(|(_, v)| *v).collect();
    let (nr, nk) = (rows[0].0.len(), rows[0].0.first().map_or(0, Vec::len));
    let parts = (0..nr)
        .map(|r| {
            (0..nk)
                .map(|k| MCEstimate::from_samples(&rows.iter().map(|(p, _)| p[r][k]).collect::<Vec<_>>()))
                .collect()
        })
        .collect();
    TermEstimate { total: MCEstimate::from_samples(&totals), parts }
}

/// First term: `1/(RK²) Σ_{r,k} E gen(S_{k,r}, A′(r−1, S_{k,r}))`.
///
/// Outer replicate `m` uses stream `("term1", m)`: the blocks come from its
/// `("data", 0)` child, the test set from `("test", 0)`, and `A′` from
/// [`modified_sgd_model`] on the replicate stream. The inner pool is drawn
/// once per replicate and shared by every `(k, r)`.
pub fn term1_estimate(cfg: &RunConfig, mu: &DataDistribution, opts: &BoundOptions) -> Result<TermEstimate> {
    check_bound_config(cfg, mu)?;
    opts.validate()?;
    let (rounds, k, tau) = (cfg.rounds(), cfg.clients, cfg.steps());
    let weight = 1.0 / (rounds * k * k) as f64;
    let rows = (0..opts.m_outer as u64)
        .into_par_iter()
        .map(|m| {
            let stream = RngStream::derive(cfg.seed, "term1", m);
            let data = draw_dataset(mu, cfg, &stream.child("data", 0))?;
            let oracle = PopulationOracle::new(mu, &cfg.loss, opts.n_test, &stream.child("test", 0));
            let pool = if rounds > 1 { inner_pool(cfg, mu, &stream, opts.m_inner, rounds - 1)? } else { Vec::new() };
            let mut parts = vec![vec![0.0; k]; rounds];
            let mut value = 0.0;
            for r in 1..=rounds {
                let rates = cfg.schedule.round_rates(r);
                for c in 1..=k {
                    let block = &data.client(c).expect("client index").samples()[(r - 1) * tau..r * tau];
                    let a_prime = if r == 1 {
                        match opts.a_prime_r1 {
                            APrimeRound1::Trained => centralized_sgd(&cfg.w0, block, rates, &cfg.loss)?,
                            APrimeRound1::Init => cfg.w0.clone(),
                        }
                    } else {
                        let models = pool
                            .iter()
                            .map(|aggs| centralized_sgd(&aggs[r - 2], block, rates, &cfg.loss))
                            .collect::<Result<Vec<_>>>()?;
                        aggregate(&models)?
                    };
                    let gen = oracle.risk(&a_prime) - block_risk(block, &a_prime, &cfg.loss);
                    parts[r - 1][c - 1] = gen;
                    value += gen;
                }
            }
            Ok((parts, weight * value))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(fold(&rows))
}

/// Second term. Replicate `m` uses stream `("term2", m)`: data from child
/// `("data", 0)`, one ghost per `(k, i)` from `("ghost", 0)`, and in sampled
/// mode one uniform `(k, i)` pair per round from `("pick", 0)`, scaled by `τK`.
pub fn term2_estimate(cfg: &RunConfig, mu: &DataDistribution, opts: &BoundOptions) -> Result<TermEstimate> {
    check_bound_config(cfg, mu)?;
    opts.validate()?;
    let (rounds, k, tau, n) = (cfg.rounds(), cfg.clients, cfg.steps(), cfg.n);
    if rounds == 1 {
        return Ok(TermEstimate { total: MCEstimate::exact(0.0), parts: Vec::new() });
    }
    let l = cfg.smoothness_constant();
    let weights: Vec<f64> = (1..rounds)
        .map(|r| l * b_coefficient(&cfg.schedule, r, l) / (n * k * k) as f64)
        .collect();
    let full_cfg = cfg.clone().with_retention(Retention::Full);
    let rows = (0..opts.m_term2 as u64)
        .into_par_iter()
        .map(|m| {
            let stream = RngStream::derive(cfg.seed, "term2", m);
            let data = draw_dataset(mu, cfg, &stream.child("data", 0))?;
            let ghosts = mu.draw(&stream.child("ghost", 0), n * k);
            let mut pick = stream.child("pick", 0).rng();
            let noise = cfg.noise_stream();
            let base = run_flsgd_with_noise(&data, &full_cfg, &noise)?;
            let divergence = |c: usize, i: usize| -> Result<f64> {
                let ghost = &ghosts[(c - 1) * n + (i - 1)];
                let r = (i - 1) / tau + 1;
                let alt = replaced_round_end(&base, &data, &full_cfg, c, i, ghost, &noise)?;
                Ok(cfg.loss.potential_grad_norm(ghost) * distance(&alt, base.round_end(c, r)?))
            };
            let mut parts = vec![vec![0.0; k]; rounds - 1];
            let mut value = 0.0;
            for r in 1..rounds {
                if opts.full_term2 {
                    for c in 1..=k {
                        for t in 1..=tau {
                            parts[r - 1][c - 1] += divergence(c, (r - 1) * tau + t)?;
                        }
                    }
                } else {
                    let c = pick.random_range(1..=k);
                    let t = pick.random_range(1..=tau);
                    parts[r - 1][c - 1] = (tau * k) as f64 * divergence(c, (r - 1) * tau + t)?;
                }
                value += weights[r - 1] * parts[r - 1].iter().sum::<f64>();
            }
            Ok((parts, value))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(fold(&rows))
}

/// Both terms of the bound with every part retained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundBreakdown {
    pub n: usize,
    pub clients: usize,
    pub rounds: usize,
    pub smoothness: f64,
    /// `b_2, ..., b_{R+1}`.
    pub b: Vec<f64>,
    /// `E gen(S_{k,r}, A′(r−1, S_{k,r}))`, indexed `[r-1][k-1]`.
    pub term1_parts: Vec<Vec<MCEstimate>>,
    /// `Σ_{i∈I_r} E[‖∇F(Z̃)‖ ‖W_{k∖i}^{(r,τ)} − W_k^{(r,τ)}‖]`, indexed `[r-1][k-1]`, `r < R`.
    pub term2_parts: Vec<Vec<MCEstimate>>,
    pub term1: MCEstimate,
    pub term2: MCEstimate,
    pub total: MCEstimate,
}

impl BoundBreakdown {
    /// The total rebuilt from the raw parts and the printed prefactors.
    pub fn recompute_total(&self) -> f64 {
        let k2 = (self.clients * self.clients) as f64;
        let t1: f64 = self.term1_parts.iter().flatten().map(|e| e.mean).sum::<f64>() / (self.rounds as f64 * k2);
        let t2: f64 = self
            .term2_parts
            .iter()
            .enumerate()
            .map(|(r0, row)| self.smoothness * self.b[r0] / (self.n as f64 * k2) * row.iter().map(|e| e.mean).sum::<f64>())
            .sum();
        t1 + t2
    }
}

pub fn theorem_bound(cfg: &RunConfig, mu: &DataDistribution, opts: &BoundOptions) -> Result<BoundBreakdown> {
    let t1 = term1_estimate(cfg, mu, opts)?;
    let t2 = term2_estimate(cfg, mu, opts)?;
    let l = cfg.smoothness_constant();
    Ok(BoundBreakdown {
        n: cfg.n,
        clients: cfg.clients,
        rounds: cfg.rounds(),
        smoothness: l,
        b: b_coefficients(&cfg.schedule, l),
        total: t1.total.plus(&t2.total),
        term1: t1.total,
        term2: t2.total,
        term1_parts: t1.parts,
        term2_parts: t2.parts,
    })
}

/// `(1/K²) Σ_k E gen(S_k, W_k^{(1,τ)})` for one-round FL-SGD.
pub fn one_shot_rhs(cfg: &RunConfig, mu: &DataDistribution, opts: &BoundOptions) -> Result<MCEstimate> {
    if cfg.rounds() != 1 {
        return Err(Error::WrongR(cfg.rounds()));
    }
    let opts = BoundOptions { a_prime_r1: APrimeRound1::Trained, ..opts.clone() };
    Ok(term1_estimate(cfg, mu, &opts)?.total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::FiniteDistribution;
    use crate::loss::LossFamily;

    const SCALAR: LossFamily = LossFamily::SquaredLocation { dim: 1 };

    fn loc(v: f64) -> Sample {
        Sample::location(vec![v])
    }

    fn bit() -> DataDistribution {
        DataDistribution::Finite(FiniteDistribution::uniform(vec![loc(0.0), loc(1.0)]).unwrap())
    }

    fn small_opts() -> BoundOptions {
        BoundOptions { m_outer: 50, m_inner: 4, m_term2: 50, n_test: 100, ..BoundOptions::default() }
    }

    #[test]
    fn b_series_by_hand() {
        let s = Schedule::constant(2, 5, 0.01).unwrap();
        let direct: f64 = (0..5).map(|t| 0.01 * 1.02f64.powi(t)).sum();
        assert!((b_coefficient(&s, 1, 2.0) - direct).abs() < 1e-15);
        assert!((b_coefficient(&s, 1, 2.0) - 0.052040402).abs() < 1e-9);
        assert_eq!(b_coefficient(&s, 2, 2.0), 0.0);
        let z = Schedule::constant(4, 3, 0.0).unwrap();
        assert!(b_coefficients(&z, 2.0).iter().all(|b| *b == 0.0));
    }

    #[test]
    fn b_is_non_increasing() {
        let mut rng = RngStream::derive(1, "b", 0).rng();
        for _ in 0..200 {
            let r = rng.random_range(1..8);
            let tau = rng.random_range(1..6);
            let table = (0..r).map(|_| (0..tau).map(|_| rng.random_range(0.001..0.5)).collect()).collect();
            let s = Schedule::from_table(table).unwrap();
            let b = b_coefficients(&s, 2.0);
            assert_eq!(*b.last().unwrap(), 0.0);
            assert!(b.windows(2).all(|w| w[1] <= w[0]));
            let b1 = b_coefficient(&s, 0, 2.0);
            assert!(b1 >= b[0]);
        }
    }

    #[test]
    fn modified_sgd_round_one() {
        let cfg = RunConfig::new(4, 2, 2, 0.25, SCALAR).unwrap();
        let block = [loc(1.0), loc(0.0)];
        let spec = ModifiedSgdSpec { round: 1, client: 1, m_inner: 9, block: &block };
        let s = RngStream::derive(0, "x", 0);
        let got = modified_sgd_model(&spec, &cfg, &bit(), &s, APrimeRound1::Trained).unwrap();
        assert!(got.bitwise_eq(&centralized_sgd(&cfg.w0, &block, &[0.25, 0.25], &SCALAR).unwrap()));
        let init = modified_sgd_model(&spec, &cfg, &bit(), &s, APrimeRound1::Init).unwrap();
        assert_eq!(init, cfg.w0);
    }

    #[test]
    fn modified_sgd_with_zero_rates_is_w0() {
        let cfg = RunConfig::new(4, 2, 2, 0.0, SCALAR).unwrap().with_w0(Model(vec![0.3]));
        let block = [loc(1.0), loc(0.0)];
        let spec = ModifiedSgdSpec { round: 2, client: 2, m_inner: 5, block: &block };
        let got = modified_sgd_model(&spec, &cfg, &bit(), &RngStream::derive(0, "z", 0), APrimeRound1::Trained).unwrap();
        assert!((got[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn tiny_instance_bound_is_quarter() {
        let cfg = RunConfig::new(1, 2, 1, 0.5, SCALAR).unwrap().with_seed(5);
        let opts = BoundOptions { m_outer: 1000, ..small_opts() };
        let b = theorem_bound(&cfg, &bit(), &opts).unwrap();
        assert!(b.total.covers(0.25, 3.0), "{:?}", b.total);
        assert_eq!(b.term2, MCEstimate::exact(0.0));
        assert!(b.term2_parts.is_empty());
        let rhs = one_shot_rhs(&cfg, &bit(), &opts).unwrap();
        assert_eq!(rhs.mean.to_bits(), b.total.mean.to_bits());
        assert_eq!(rhs.se.to_bits(), b.total.se.to_bits());
    }

    #[test]
    fn singleton_bound_vanishes() {
        let mu = DataDistribution::Finite(FiniteDistribution::singleton(loc(0.4)));
        let cfg = RunConfig::new(4, 2, 2, 0.1, SCALAR).unwrap();
        let b = theorem_bound(&cfg, &mu, &small_opts()).unwrap();
        assert!(b.total.mean.abs() < 1e-15);
        let one = RunConfig::new(4, 2, 1, 0.1, SCALAR).unwrap();
        assert!(one_shot_rhs(&one, &mu, &small_opts()).unwrap().mean.abs() < 1e-15);
    }

    #[test]
    fn breakdown_total_matches_parts() {
        let mu = DataDistribution::GaussianLocation { mean: vec![0.5, -0.5], sigma: 1.0 };
        let cfg = RunConfig::new(6, 3, 3, 0.1, LossFamily::SquaredLocation { dim: 2 }).unwrap();
        let b = theorem_bound(&cfg, &mu, &BoundOptions { m_term2: 50, ..small_opts() }).unwrap();
        assert!((b.recompute_total() - b.total.mean).abs() <= 1e-12);
        assert_eq!(b.term1_parts.len(), 3);
        assert_eq!(b.term2_parts.len(), 2);
        assert_eq!(b.b.len(), 3);
        let full = theorem_bound(&cfg, &mu, &BoundOptions { full_term2: true, m_term2: 20, ..small_opts() }).unwrap();
        assert!((full.recompute_total() - full.total.mean).abs() <= 1e-12);
    }

    #[test]
    fn deterministic_estimates() {
        let mu = DataDistribution::GaussianLinear { w_star: vec![1.0, -1.0], sigma_noise: 0.5 };
        let cfg = RunConfig::new(4, 2, 2, 0.05, LossFamily::OlsRegression { dim: 2 }).unwrap().with_seed(8);
        let a = theorem_bound(&cfg, &mu, &small_opts()).unwrap();
        let b = theorem_bound(&cfg, &mu, &small_opts()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_noise_and_wrong_rounds() {
        let cfg = RunConfig::new(2, 2, 1, 0.1, SCALAR).unwrap().with_noise(0.1);
        assert_eq!(theorem_bound(&cfg, &bit(), &small_opts()), Err(Error::NoisyRunUnsupported));
        let two = RunConfig::new(2, 2, 2, 0.1, SCALAR).unwrap();
        assert_eq!(one_shot_rhs(&two, &bit(), &small_opts()), Err(Error::WrongR(2)));
    }

    #[test]
    fn shared_pool_matches_literal_modified_sgd() {
        // The first term reuses one inner pool per outer replicate; each A′ must
        // equal the stand-alone construction on the same stream.
        let mu = DataDistribution::GaussianLocation { mean: vec![0.2], sigma: 1.0 };
        let cfg = RunConfig::new(6, 2, 3, 0.1, SCALAR).unwrap().with_seed(2);
        let stream = RngStream::derive(cfg.seed, "term1", 0);
        let data = draw_dataset(&mu, &cfg, &stream.child("data", 0)).unwrap();
        let pool = inner_pool(&cfg, &mu, &stream, 3, 2).unwrap();
        for r in 2..=3 {
            for c in 1..=2 {
                let block = &data.client(c).unwrap().samples()[(r - 1) * 2..r * 2];
                let spec = ModifiedSgdSpec { round: r, client: c, m_inner: 3, block };
                let literal = modified_sgd_model(&spec, &cfg, &mu, &stream, APrimeRound1::Trained).unwrap();
                let models: Vec<Model> = pool
                    .iter()
                    .map(|a| centralized_sgd(&a[r - 2], block, cfg.schedule.round_rates(r), &SCALAR).unwrap())
                    .collect();
                assert!(literal.bitwise_eq(&aggregate(&models).unwrap()));
            }
        }
    }
}
