use fedgen::engine::{aggregate, centralized_sgd, replay_from_divergence, run_flsgd, run_flsgd_replaced};
use fedgen::loss::LossFamily;
use fedgen::model::{FederatedDataset, Model, Replacement, RunConfig, Sample, Schedule};
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct Instance {
    data: FederatedDataset,
    cfg: RunConfig,
    ghost: Sample,
    client: usize,
    index: usize,
}

fn sample_strategy(family: LossFamily) -> BoxedStrategy<Sample> {
    let d = family.dim();
    match family {
        LossFamily::SquaredLocation { .. } => prop::collection::vec(-3.0f64..3.0, d).prop_map(Sample::location).boxed(),
        LossFamily::OlsRegression { .. } => (prop::collection::vec(-1.0f64..1.0, d), -3.0f64..3.0)
            .prop_map(|(x, y)| Sample::regression(x, y))
            .boxed(),
    }
}

fn instance() -> impl Strategy<Value = Instance> {
    (1usize..=3, prop::sample::select(vec![1usize, 2, 3, 4, 6]), 1usize..=3, any::<bool>())
        .prop_flat_map(|(k, n, d, ols)| {
            let family = if ols { LossFamily::OlsRegression { dim: d } } else { LossFamily::SquaredLocation { dim: d } };
            let divisors: Vec<usize> = (1..=n).filter(|r| n % r == 0).collect();
            (
                Just((k, n, family)),
                prop::sample::select(divisors),
                prop::collection::vec(sample_strategy(family), n * k),
                sample_strategy(family),
                prop::collection::vec(-1.0f64..1.0, d),
                prop::collection::vec(0.0f64..0.2, n),
                1..=k,
                1..=n,
            )
        })
        .prop_map(|((k, n, family), rounds, flat, ghost, w0, rates, client, index)| {
            let tau = n / rounds;
            let table = rates.chunks(tau).map(<[f64]>::to_vec).collect();
            let cfg = RunConfig::with_schedule(n, k, Schedule::from_table(table).unwrap(), family)
                .unwrap()
                .with_w0(Model(w0));
            Instance { data: FederatedDataset::from_flat(flat, k).unwrap(), cfg, ghost, client, index }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn replay_matches_full_rerun_bitwise(inst in instance()) {
        let rep = Replacement::new(inst.client, inst.index, inst.ghost.clone());
        let base = run_flsgd(&inst.data, &inst.cfg).unwrap();
        let reference = run_flsgd_replaced(&inst.data, &rep, &inst.cfg).unwrap();
        let replayed = replay_from_divergence(&base, &inst.data, &rep, &inst.cfg).unwrap();
        prop_assert!(replayed.bitwise_eq(&reference));
    }

    #[test]
    fn one_round_is_the_mean_of_local_runs(inst in instance()) {
        let n = inst.cfg.n;
        let cfg = RunConfig::new(n, inst.cfg.clients, 1, 0.05, inst.cfg.loss).unwrap().with_w0(inst.cfg.w0.clone());
        let traj = run_flsgd(&inst.data, &cfg).unwrap();
        let locals: Vec<Model> = inst
            .data
            .clients()
            .iter()
            .map(|c| centralized_sgd(&cfg.w0, c.samples(), &vec![0.05; n], &cfg.loss).unwrap())
            .collect();
        prop_assert!(traj.final_model().bitwise_eq(&aggregate(&locals).unwrap()));
    }

    #[test]
    fn aggregate_lies_in_the_coordinate_hull(models in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 1..6)) {
        let models: Vec<Model> = models.into_iter().map(Model).collect();
        let mean = aggregate(&models).unwrap();
        for j in 0..3 {
            let lo = models.iter().map(|m| m[j]).fold(f64::INFINITY, f64::min);
            let hi = models.iter().map(|m| m[j]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(mean[j] >= lo - 1e-12 && mean[j] <= hi + 1e-12);
        }
        let mut reversed = models.clone();
        reversed.reverse();
        let other = aggregate(&reversed).unwrap();
        for j in 0..3 {
            prop_assert!((mean[j] - other[j]).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_rates_leave_w0_untouched(inst in instance()) {
        let rounds = inst.cfg.rounds();
        let table = vec![vec![0.0; inst.cfg.steps()]; rounds];
        let cfg = RunConfig::with_schedule(inst.cfg.n, inst.cfg.clients, Schedule::from_table(table).unwrap(), inst.cfg.loss)
            .unwrap()
            .with_w0(inst.cfg.w0.clone());
        let traj = run_flsgd(&inst.data, &cfg).unwrap();
        for (a, b) in traj.final_model().iter().zip(cfg.w0.iter()) {
            prop_assert!((a - b).abs() <= 1e-15 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn round_end_divergence_obeys_the_growth_bound(inst in instance()) {
        prop_assume!(matches!(inst.cfg.loss, LossFamily::SquaredLocation { .. }));
        let cfg = &inst.cfg;
        let tau = cfg.steps();
        let r = (inst.index - 1) / tau + 1;
        let t = (inst.index - 1) % tau + 1;
        let rep = Replacement::new(inst.client, inst.index, inst.ghost.clone());
        let base = run_flsgd(&inst.data, cfg).unwrap();
        let alt = run_flsgd_replaced(&inst.data, &rep, cfg).unwrap();
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let rates = cfg.schedule.round_rates(r);
        let z = inst.data.sample(inst.client, inst.index);
        let l = cfg.smoothness_constant();
        let (gz, gg) = (cfg.loss.potential_grad_at_sample(z).unwrap(), cfg.loss.potential_grad_at_sample(&inst.ghost).unwrap());
        let mut bound = rates[t - 1] * gz.iter()
            .zip(&gg)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        for &eta in &rates[t..] {
            bound *= 1.0 + l * eta;
        }
        let d = dist(base.round_end(inst.client, r).unwrap(), alt.round_end(inst.client, r).unwrap());
        prop_assert!(d <= bound * (1.0 + 1e-12) + 1e-15, "{d} > {bound}");
    }
}

#[test]
fn identical_clients_agree_for_every_round_count() {
    let family = LossFamily::SquaredLocation { dim: 2 };
    let samples: Vec<Sample> = (0..12).map(|i| Sample::location(vec![(i % 4) as f64 * 0.5 - 1.0, (i % 3) as f64])).collect();
    let data = FederatedDataset::from_flat([samples.clone(), samples.clone(), samples.clone()].concat(), 3).unwrap();
    let single = centralized_sgd(&Model::zeros(2), &samples, &[0.03; 12], &family).unwrap();
    for rounds in [1, 2, 3, 4, 6, 12] {
        let cfg = RunConfig::new(12, 3, rounds, 0.03, family).unwrap();
        let w = run_flsgd(&data, &cfg).unwrap().final_model().clone();
        for (a, b) in w.iter().zip(single.iter()) {
            assert!((a - b).abs() <= 1e-13, "R={rounds}: {a} vs {b}");
        }
    }
}
