use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sdsra::envs::EnvKind;
use sdsra::harness::{parse_config, RunConfig, Threshold};
use sdsra::policy::GaussianPolicy;
use sdsra::tabular::{
    mixture_entropy_gap, random_simplex, soft_backup, soft_policy_improvement, QTable, TabularMdp, TabularPolicy,
};

fn simplex(raw: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn soft_backup_contracts(seed in any::<u64>(), scale in 0.1f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = TabularMdp::random(&mut rng, 6, 6);
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let pi = TabularPolicy::random(&mut rng, ns, na);
        let q = |k: f64| QTable::from_values(ns, na, (0..ns * na).map(|i| scale * ((i as f64 + k) * 1.7).sin()).collect()).unwrap();
        let (q1, q2) = (q(0.0), q(3.0));
        let lhs = soft_backup(&mdp, &pi, &q1).unwrap().sup_distance(&soft_backup(&mdp, &pi, &q2).unwrap());
        prop_assert!(lhs <= (mdp.gamma() + 1e-9) * q1.sup_distance(&q2));
    }

    #[test]
    fn improvement_rows_are_distributions(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = TabularMdp::random(&mut rng, 6, 6);
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let q = QTable::from_values(ns, na, random_simplex(&mut rng, ns * na, 0.0).iter().map(|x| 40.0 * x).collect()).unwrap();
        let pi = soft_policy_improvement(&mdp, &q).unwrap();
        for s in 0..ns {
            let row = pi.row(s);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn mixture_entropy_respects_jensen(
        raw_w in prop::collection::vec(1e-6f64..1.0, 1..5),
        raw_p in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 4), 5),
    ) {
        let weights = simplex(&raw_w);
        let dists: Vec<Vec<f64>> = raw_p[..weights.len()]
            .iter()
            .map(|p| {
                let mut p = p.clone();
                p[0] += 1e-3;
                simplex(&p)
            })
            .collect();
        let gap = mixture_entropy_gap(&weights, &dists).unwrap();
        prop_assert!(gap.jensen_holds(1e-12));
        prop_assert!(gap.mixture <= (4.0f64).ln() + 1e-12);
    }

    #[test]
    fn config_round_trips(
        beta in -1.0f64..1.0,
        tau in 1e-4f64..=1.0,
        num_skills in 1usize..=16,
        seeds in prop::collection::btree_set(any::<u64>(), 1..4),
        threshold in prop::option::of(-5000.0f64..0.0),
    ) {
        let mut config = RunConfig::default();
        config.agent.beta = beta;
        config.agent.tau = tau;
        config.agent.num_skills = num_skills;
        config.seeds = seeds.into_iter().collect();
        config.threshold = threshold.map_or(Threshold::Auto, Threshold::Value);
        let (parsed, defaults) = parse_config(&config.render()).unwrap();
        prop_assert_eq!(parsed, config);
        prop_assert!(defaults.is_empty());
    }

    #[test]
    fn environments_are_deterministic(
        seed in any::<u64>(),
        actions in prop::collection::vec(-3.0f64..3.0, 2 * 60),
        pointmass in any::<bool>(),
    ) {
        let kind = if pointmass { EnvKind::PointMass } else { EnvKind::Pendulum };
        let (mut a, mut b) = (kind.make(), kind.make());
        prop_assert_eq!(a.reset(seed), b.reset(seed));
        let d = a.spec().action_dim;
        for act in actions.chunks_exact(2).take(60) {
            let (x, y) = (a.step(&act[..d]).unwrap(), b.step(&act[..d]).unwrap());
            prop_assert!(x.reward <= 0.0 && x.reward.is_finite());
            prop_assert!(x.state.iter().all(|v| v.is_finite()));
            prop_assert_eq!(x, y);
        }
    }

    #[test]
    fn sampled_log_prob_matches_density(seed in any::<u64>(), noise in prop::collection::vec(-3.0f64..3.0, 2),
                                        state in prop::collection::vec(-2.0f64..2.0, 3), squash in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let policy = GaussianPolicy::new(3, 2, &[8], squash, &mut rng).unwrap();
        let sample = policy.sample_with_noise(&state, &noise).unwrap();
        if squash {
            prop_assert!(sample.action.iter().all(|a| a.abs() < 1.0));
        }
        let lp = policy.log_prob(&state, &sample.action).unwrap();
        prop_assert!((lp - sample.log_prob).abs() <= 1e-6 * (1.0 + lp.abs()), "{} vs {}", lp, sample.log_prob);
    }
}
