//! Empirical risk, population risk, generalization error and their
//! Monte-Carlo expectations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::DataDistribution;
use crate::engine::{run_flsgd_with_noise, Trajectory};
use crate::error::{Error, Result};
use crate::loss::LossFamily;
use crate::model::{FederatedDataset, Retention, RunConfig, Sample};
use crate::rng::RngStream;

/// Mean and standard error of `M` i.i.d. replicates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub mean: f64,
    pub se: f64,
    pub replicates: usize,
}

impl MCEstimate {
    /// Sample mean and `s/√M` with the unbiased sample variance; `se = 0` when `M = 1`.
    pub fn from_samples(values: &[f64]) -> Self {
        let m = values.len();
        assert!(m >= 1, "at least one replicate");
        let mf = m as f64;
        let mean = values.iter().sum::<f64>() / mf;
        let se = if m == 1 {
            0.0
        } else {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (mf - 1.0);
            (var / mf).sqrt()
        };
        MCEstimate { mean, se, replicates: m }
    }

    pub fn exact(value: f64) -> Self {
        MCEstimate { mean: value, se: 0.0, replicates: 1 }
    }

    /// Sum of two independent estimates.
    pub fn plus(&self, other: &MCEstimate) -> MCEstimate {
        let se = if other.se == 0.0 {
            self.se
        } else if self.se == 0.0 {
            other.se
        } else {
            self.se.hypot(other.se)
        };
        MCEstimate { mean: self.mean + other.mean, se, replicates: self.replicates.max(other.replicates) }
    }

    /// Whether `value` lies within `k` standard errors of the mean.
    pub fn covers(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.se
    }
}

/// How population risk is evaluated.
#[derive(Debug, Clone, PartialEq)]
pub enum RiskMode {
    /// Closed form; fails with [`Error::NoClosedForm`] if the distribution has none.
    Exact,
    /// Mean loss over `n_test` fresh draws from `stream`.
    MonteCarlo { n_test: usize, stream: RngStream },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RiskValue {
    Exact(f64),
    Estimate(MCEstimate),
}

impl RiskValue {
    pub fn value(&self) -> f64 {
        match self {
            RiskValue::Exact(v) => *v,
            RiskValue::Estimate(e) => e.mean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub empirical: f64,
    pub population: RiskValue,
    /// `population − empirical`.
    pub gen: f64,
}

/// Mean loss over all `nK` samples, client-major.
pub fn empirical_risk(data: &FederatedDataset, w: &[f64], family: &LossFamily) -> Result<f64> {
    family.check(data.prototype())?;
    if w.len() != family.dim() {
        return Err(Error::DimensionMismatch { expected: family.dim(), got: w.len() });
    }
    Ok(mean_loss(data.iter_samples(), w, family))
}

/// Running mean; exact when every value is equal.
pub(crate) fn running_mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut mean = 0.0;
    for (j, v) in values.enumerate() {
        mean += (v - mean) / (j + 1) as f64;
    }
    mean
}

fn mean_loss<'a>(samples: impl Iterator<Item = &'a Sample>, w: &[f64], family: &LossFamily) -> f64 {
    running_mean(samples.map(|z| family.loss_unchecked(z, w)))
}

pub fn population_risk(mu: &DataDistribution, w: &[f64], family: &LossFamily, mode: &RiskMode) -> Result<RiskValue> {
    mu.check_family(family)?;
    if w.len() != family.dim() {
        return Err(Error::DimensionMismatch { expected: family.dim(), got: w.len() });
    }
    match mode {
        RiskMode::Exact => mu
            .closed_form_population_risk(w, family)?
            .map(RiskValue::Exact)
            .ok_or(Error::NoClosedForm),
        RiskMode::MonteCarlo { n_test, stream } => {
            if *n_test == 0 {
                return Err(Error::InvalidConfig("N_test must be at least 1".into()));
            }
            let losses: Vec<f64> = mu.draw_test(stream, *n_test).iter().map(|z| family.loss_unchecked(z, w)).collect();
            Ok(RiskValue::Estimate(MCEstimate::from_samples(&losses)))
        }
    }
}

pub fn gen_error(
    data: &FederatedDataset,
    w: &[f64],
    mu: &DataDistribution,
    family: &LossFamily,
    mode: &RiskMode,
) -> Result<RiskReport> {
    let empirical = empirical_risk(data, w, family)?;
    let population = population_risk(mu, w, family, mode)?;
    Ok(RiskReport { empirical, population, gen: population.value() - empirical })
}

/// Population risk used inside Monte-Carlo loops: the closed form when the
/// distribution has one, otherwise the mean over a fixed test set.
pub(crate) enum PopulationOracle<'a> {
    Exact(&'a DataDistribution, LossFamily),
    TestSet(Vec<Sample>, LossFamily),
}

impl<'a> PopulationOracle<'a> {
    pub fn new(mu: &'a DataDistribution, family: &LossFamily, n_test: usize, stream: &RngStream) -> Self {
        if mu.has_closed_form() {
            PopulationOracle::Exact(mu, *family)
        } else {
            PopulationOracle::TestSet(mu.draw_test(stream, n_test.max(1)), *family)
        }
    }

    pub fn risk(&self, w: &[f64]) -> f64 {
        match self {
            PopulationOracle::Exact(mu, fam) => mu
                .closed_form_population_risk(w, fam)
                .expect("family checked")
                .expect("closed form advertised"),
            PopulationOracle::TestSet(set, fam) => mean_loss(set.iter(), w, fam),
        }
    }
}

/// Mean loss of `w` over a slice of samples.
pub(crate) fn block_risk(samples: &[Sample], w: &[f64], family: &LossFamily) -> f64 {
    mean_loss(samples.iter(), w, family)
}

/// `(1/R) Σ_r [𝓛(W̄^{(r)}) − mean loss of W̄^{(r)} on round r's samples]`.
pub fn proxy_delta_sgd(
    traj: &Trajectory,
    data: &FederatedDataset,
    mu: &DataDistribution,
    family: &LossFamily,
    mode: &RiskMode,
) -> Result<f64> {
    let oracle = match mode {
        RiskMode::Exact => {
            if !mu.has_closed_form() {
                return Err(Error::NoClosedForm);
            }
            PopulationOracle::Exact(mu, *family)
        }
        RiskMode::MonteCarlo { n_test, stream } => PopulationOracle::TestSet(mu.draw_test(stream, *n_test), *family),
    };
    mu.check_family(family)?;
    proxy_with(traj, data, &oracle)
}

pub(crate) fn proxy_with(traj: &Trajectory, data: &FederatedDataset, oracle: &PopulationOracle<'_>) -> Result<f64> {
    let rounds = traj.rounds();
    let tau = traj.steps();
    if rounds * tau != data.samples_per_client() || traj.aggregates().len() != rounds {
        return Err(Error::RetentionInsufficient);
    }
    let family = match oracle {
        PopulationOracle::Exact(_, f) | PopulationOracle::TestSet(_, f) => *f,
    };
    let mut total = 0.0;
    for r in 1..=rounds {
        let w = traj.aggregate(r)?;
        let round = data.clients().iter().flat_map(|c| &c.samples()[(r - 1) * tau..r * tau]);
        total += oracle.risk(w) - mean_loss(round, w, &family);
    }
    Ok(total / rounds as f64)
}

/// Everything measured on one Monte-Carlo replicate of FL-SGD.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicateOutcome {
    pub gen: f64,
    pub empirical: f64,
    pub population: f64,
    pub proxy: f64,
}

/// Draws a fresh `nK`-sample federated dataset from `stream`, client-major.
pub fn draw_dataset(mu: &DataDistribution, cfg: &RunConfig, stream: &RngStream) -> Result<FederatedDataset> {
    FederatedDataset::from_flat(mu.draw(stream, cfg.n * cfg.clients), cfg.clients)
}

/// Runs `M` replicates. Replicate `m` reads its data from stream
/// `("gen", m)`, its test set from `("test", m)` and its step noise from
/// `("noise", m)`; none depend on `R`, so sweeps over `R` share data.
pub fn gen_replicates(cfg: &RunConfig, mu: &DataDistribution, m: usize, n_test: usize) -> Result<Vec<ReplicateOutcome>> {
    if m == 0 {
        return Err(Error::InvalidConfig("M must be at least 1".into()));
    }
    cfg.validate()?;
    mu.check_family(&cfg.loss)?;
    let cfg = cfg.clone().with_retention(Retention::AggregatesOnly);
    (0..m as u64)
        .into_par_iter()
        .map(|rep| {
            let data = draw_dataset(mu, &cfg, &RngStream::derive(cfg.seed, "gen", rep))?;
            let noise = RngStream::derive(cfg.seed, "noise", rep);
            let traj = run_flsgd_with_noise(&data, &cfg, &noise)?;
            let oracle = PopulationOracle::new(mu, &cfg.loss, n_test, &RngStream::derive(cfg.seed, "test", rep));
            let w = traj.final_model();
            let empirical = mean_loss(data.iter_samples(), w, &cfg.loss);
            let population = oracle.risk(w);
            let proxy = proxy_with(&traj, &data, &oracle)?;
            Ok(ReplicateOutcome { gen: population - empirical, empirical, population, proxy })
        })
        .collect()
}

/// `E_S[gen(S, W̄^{(R)})]` over `M` replicates.
pub fn expected_gen_error(cfg: &RunConfig, mu: &DataDistribution, m: usize, n_test: usize) -> Result<MCEstimate> {
    let reps = gen_replicates(cfg, mu, m, n_test)?;
    Ok(MCEstimate::from_samples(&reps.iter().map(|o| o.gen).collect::<Vec<_>>()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::FiniteDistribution;
    use crate::engine::run_flsgd;
    use crate::model::ClientDataset;

    const SCALAR: LossFamily = LossFamily::SquaredLocation { dim: 1 };

    fn loc(v: f64) -> Sample {
        Sample::location(vec![v])
    }

    fn bit() -> DataDistribution {
        DataDistribution::Finite(FiniteDistribution::uniform(vec![loc(0.0), loc(1.0)]).unwrap())
    }

    #[test]
    fn estimate_statistics() {
        let e = MCEstimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        assert!((e.se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(MCEstimate::from_samples(&[7.0]).se, 0.0);
        let sum = e.plus(&MCEstimate::exact(0.0));
        assert_eq!(sum, MCEstimate { mean: 2.5, se: e.se, replicates: 4 });
    }

    #[test]
    fn empirical_risk_examples() {
        let data = FederatedDataset::new(vec![ClientDataset::new(vec![loc(0.0), loc(2.0)]).unwrap()]).unwrap();
        assert_eq!(empirical_risk(&data, &[1.0], &SCALAR).unwrap(), 1.0);
        let one = FederatedDataset::new(vec![ClientDataset::new(vec![loc(0.4)]).unwrap()]).unwrap();
        assert_eq!(empirical_risk(&one, &[0.4], &SCALAR).unwrap(), 0.0);
        let two = FederatedDataset::from_flat(vec![loc(0.0), loc(2.0), loc(1.0), loc(1.0)], 2).unwrap();
        assert_eq!(empirical_risk(&two, &[1.0], &SCALAR).unwrap(), 0.5);
        assert!(empirical_risk(&two, &[1.0, 0.0], &SCALAR).is_err());
    }

    #[test]
    fn empirical_risk_reindexes_by_round() {
        let mu = DataDistribution::GaussianLocation { mean: vec![0.2, -0.4], sigma: 1.0 };
        let fam = LossFamily::SquaredLocation { dim: 2 };
        let cfg = RunConfig::new(6, 3, 3, 0.1, fam).unwrap();
        let data = draw_dataset(&mu, &cfg, &RngStream::derive(1, "emp", 0)).unwrap();
        let w = [0.3, 0.1];
        let flat = empirical_risk(&data, &w, &fam).unwrap();
        let mut by_round = 0.0;
        for k in 1..=3 {
            for r in 1..=3 {
                for t in 1..=2 {
                    by_round += fam.loss(data.sample(k, (r - 1) * 2 + t), &w).unwrap();
                }
            }
        }
        assert!((flat - by_round / 18.0).abs() < 1e-12);
    }

    #[test]
    fn population_risk_modes() {
        let mu = DataDistribution::GaussianLocation { mean: vec![0.0, 0.0], sigma: 1.0 };
        let fam = LossFamily::SquaredLocation { dim: 2 };
        assert_eq!(population_risk(&mu, &[0.0, 0.0], &fam, &RiskMode::Exact).unwrap(), RiskValue::Exact(2.0));
        let f1 = DataDistribution::Friedman1 { sigma_noise: 1.0 };
        let ols = LossFamily::OlsRegression { dim: 10 };
        assert_eq!(population_risk(&f1, &[0.0; 10], &ols, &RiskMode::Exact), Err(Error::NoClosedForm));
        let mode = RiskMode::MonteCarlo { n_test: 100, stream: RngStream::derive(0, "t", 0) };
        assert!(matches!(population_risk(&f1, &[0.0; 10], &ols, &mode).unwrap(), RiskValue::Estimate(_)));
    }

    #[test]
    fn monte_carlo_population_risk_covers_closed_form() {
        let mu = DataDistribution::GaussianLocation { mean: vec![1.0, -0.5], sigma: 1.0 };
        let fam = LossFamily::SquaredLocation { dim: 2 };
        let w = [0.2, 0.3];
        let exact = mu.closed_form_population_risk(&w, &fam).unwrap().unwrap();
        let mut hits = 0;
        for seed in 0..100 {
            let mode = RiskMode::MonteCarlo { n_test: 1000, stream: RngStream::derive(seed, "pop", 0) };
            let RiskValue::Estimate(e) = population_risk(&mu, &w, &fam, &mode).unwrap() else { panic!() };
            if e.covers(exact, 4.0) {
                hits += 1;
            }
        }
        assert!(hits >= 99, "{hits}");
    }

    #[test]
    fn singleton_distribution_has_no_gap() {
        let mu = DataDistribution::Finite(FiniteDistribution::singleton(loc(0.7)));
        let data = FederatedDataset::from_flat(vec![loc(0.7); 4], 2).unwrap();
        let r = gen_error(&data, &[-3.0], &mu, &SCALAR, &RiskMode::Exact).unwrap();
        assert_eq!(r.gen, 0.0);
        let cfg = RunConfig::new(2, 2, 1, 0.3, SCALAR).unwrap();
        let e = expected_gen_error(&cfg, &mu, 10, 10).unwrap();
        assert_eq!((e.mean, e.se), (0.0, 0.0));
    }

    #[test]
    fn interpolating_model_gap_is_population_risk() {
        let data = FederatedDataset::from_flat(vec![loc(1.0)], 1).unwrap();
        let r = gen_error(&data, &[1.0], &bit(), &SCALAR, &RiskMode::Exact).unwrap();
        assert_eq!(r.empirical, 0.0);
        assert_eq!(r.gen, 0.5);
    }

    #[test]
    fn tiny_instance_per_realization() {
        // K=2, n=1, η=0.5: each client's model lands on its sample.
        let cfg = RunConfig::new(1, 2, 1, 0.5, SCALAR).unwrap();
        let mut gens = Vec::new();
        for (a, b) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
            let data = FederatedDataset::from_flat(vec![loc(a), loc(b)], 2).unwrap();
            let traj = run_flsgd(&data, &cfg).unwrap();
            gens.push(gen_error(&data, traj.final_model(), &bit(), &SCALAR, &RiskMode::Exact).unwrap().gen);
        }
        assert_eq!(gens, vec![0.5, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn tiny_instance_expectation() {
        let cfg = RunConfig::new(1, 2, 1, 0.5, SCALAR).unwrap().with_seed(3);
        let e = expected_gen_error(&cfg, &bit(), 1000, 1000).unwrap();
        assert!(e.covers(0.25, 3.0), "{e:?}");
        assert_eq!(e, expected_gen_error(&cfg, &bit(), 1000, 1000).unwrap());
    }

    #[test]
    fn proxy_collapses_to_gen_for_one_round() {
        let mu = DataDistribution::GaussianLocation { mean: vec![0.5], sigma: 1.0 };
        let cfg = RunConfig::new(5, 3, 1, 0.1, SCALAR).unwrap();
        let data = draw_dataset(&mu, &cfg, &RngStream::derive(4, "proxy", 0)).unwrap();
        let traj = run_flsgd(&data, &cfg).unwrap();
        let gen = gen_error(&data, traj.final_model(), &mu, &SCALAR, &RiskMode::Exact).unwrap().gen;
        assert_eq!(proxy_delta_sgd(&traj, &data, &mu, &SCALAR, &RiskMode::Exact).unwrap(), gen);
        let point = DataDistribution::Finite(FiniteDistribution::singleton(loc(0.5)));
        let data = FederatedDataset::from_flat(vec![loc(0.5); 6], 3).unwrap();
        let cfg = RunConfig::new(2, 3, 2, 0.1, SCALAR).unwrap();
        let traj = run_flsgd(&data, &cfg).unwrap();
        assert_eq!(proxy_delta_sgd(&traj, &data, &point, &SCALAR, &RiskMode::Exact).unwrap(), 0.0);
    }

    #[test]
    fn proxy_by_hand_two_rounds() {
        // K=1, samples 1, 3, η=0.5: W̄¹ = 1, W̄² = 3.
        let data = FederatedDataset::from_flat(vec![loc(1.0), loc(3.0)], 1).unwrap();
        let cfg = RunConfig::new(2, 1, 2, 0.5, SCALAR).unwrap();
        let traj = run_flsgd(&data, &cfg).unwrap();
        let mu = bit();
        // Round 1: 𝓛(1) = 0.5, loss on z=1 is 0. Round 2: 𝓛(3) = (9+4)/2 = 6.5, loss on z=3 is 0.
        let got = proxy_delta_sgd(&traj, &data, &mu, &SCALAR, &RiskMode::Exact).unwrap();
        assert_eq!(got, (0.5 + 6.5) / 2.0);
    }
}
