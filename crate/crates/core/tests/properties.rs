use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use suffice_core::env::{generate_driving, generate_gridworld, Demonstrator, DemonstratorConfig, DrivingConfig, GridworldConfig};
use suffice_core::mdp::{
    bellman_sweep, solve_optimal, uniform_random_policy, value_iteration, MdpParts, Policy, PolicyEvaluator,
    RewardWeights, TabularMdp,
};
use suffice_core::risk::{nevd, normalized_regret, percent_improvement, piob, RiskConfig};
use suffice_core::sufficiency::{teaching_loop, Condition, Selection, SufficiencyConfig};

fn random_mdp(seed: u64, n: usize, num_actions: usize, k: usize, gamma: f64) -> TabularMdp<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transitions = Vec::new();
    for s in 0..n {
        for a in 0..num_actions {
            let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>().powi(3)).collect();
            let total: f64 = raw.iter().sum();
            for (next, p) in raw.into_iter().enumerate() {
                transitions.push((s, a, next, p / total));
            }
        }
    }
    TabularMdp::new(MdpParts {
        num_states: n,
        num_actions,
        transitions,
        features: (0..n).map(|_| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
        discount: gamma,
        initial_dist: vec![1.0 / n as f64; n],
        terminal_states: vec![],
    })
    .unwrap()
}

fn scaled_features(mdp: &TabularMdp<f64>, c: f64) -> TabularMdp<f64> {
    TabularMdp::new(MdpParts {
        num_states: mdp.num_states(),
        num_actions: mdp.num_actions(),
        transitions: mdp.transition_triples().collect(),
        features: (0..mdp.num_states()).map(|s| mdp.features(s).iter().map(|x| x * c).collect()).collect(),
        discount: mdp.discount(),
        initial_dist: mdp.initial_dist().to_vec(),
        terminal_states: mdp.terminal_states().to_vec(),
    })
    .unwrap()
}

fn random_policy(seed: u64, n: usize, num_actions: usize) -> Policy<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let actions: Vec<usize> = (0..n).map(|_| rng.random_range(0..num_actions)).collect();
    Policy::deterministic(&actions, num_actions).unwrap()
}

fn expected(mdp: &TabularMdp<f64>, values: &[f64]) -> f64 {
    mdp.initial_dist().iter().zip(values).map(|(p, v)| p * v).sum()
}

/// nEVD straight from a reward vector via the exact solvers.
fn nevd_of_rewards(mdp: &TabularMdp<f64>, robot: &Policy<f64>, rewards: &[f64]) -> f64 {
    let optimal = solve_optimal(mdp, rewards, None).values;
    let v_robot = PolicyEvaluator::new(mdp, robot).unwrap().evaluate(rewards);
    let v_rand = PolicyEvaluator::new(mdp, &uniform_random_policy(mdp)).unwrap().evaluate(rewards);
    normalized_regret(expected(mdp, &optimal), expected(mdp, &v_robot), expected(mdp, &v_rand), 1e-8).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bellman_backup_is_a_contraction(seed in any::<u64>(), gamma in 0.0..0.99f64) {
        let mdp = random_mdp(seed, 8, 3, 3, gamma);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let rewards: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let u: Vec<f64> = (0..8).map(|_| rng.random_range(-10.0..10.0)).collect();
        let v: Vec<f64> = (0..8).map(|_| rng.random_range(-10.0..10.0)).collect();
        let tu = bellman_sweep(&mdp, &rewards, &u);
        let tv = bellman_sweep(&mdp, &rewards, &v);
        let before = u.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let after = tu.iter().zip(&tv).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(after <= gamma * before + 1e-12);
    }

    #[test]
    fn nevd_is_non_negative(seed in any::<u64>()) {
        let mdp = random_mdp(seed, 10, 3, 4, 0.9);
        let w = RewardWeights::new(mdp.features(0).to_vec()).unwrap();
        let robot = random_policy(seed, 10, 3);
        if let Ok(x) = nevd(&mdp, &robot, &w, &RiskConfig::default()) {
            prop_assert!(x >= -1e-6);
        }
    }

    #[test]
    fn nevd_endpoints(seed in 0u64..500) {
        let env = generate_gridworld::<f64>(&GridworldConfig::new(5, 5, 4, seed)).unwrap();
        let cfg = RiskConfig::default();
        let optimal = value_iteration(&env.mdp, &env.true_weights, 1e-10).unwrap().1;
        prop_assert!(nevd(&env.mdp, &optimal, &env.true_weights, &cfg).unwrap().abs() < 1e-6);
        let random = uniform_random_policy(&env.mdp);
        prop_assert!((nevd(&env.mdp, &random, &env.true_weights, &cfg).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn nevd_invariant_under_scaling_and_shift(seed in any::<u64>(), c in 0.01..100.0f64, shift in -5.0..5.0f64) {
        let mdp = random_mdp(seed, 10, 3, 3, 0.9);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(3));
        let rewards: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let robot = random_policy(seed, 10, 3);
        let base = nevd_of_rewards(&mdp, &robot, &rewards);
        let scaled: Vec<f64> = rewards.iter().map(|r| c * r).collect();
        let shifted: Vec<f64> = rewards.iter().map(|r| r + shift).collect();
        prop_assert!((nevd_of_rewards(&mdp, &robot, &scaled) - base).abs() < 1e-6);
        prop_assert!((nevd_of_rewards(&mdp, &robot, &shifted) - base).abs() < 1e-6);
    }

    #[test]
    fn nevd_invariant_under_feature_scaling(seed in 0u64..200, c in 0.1..10.0f64) {
        let env = generate_gridworld::<f64>(&GridworldConfig::new(4, 4, 3, seed)).unwrap();
        let robot = random_policy(seed, 16, 4);
        let cfg = RiskConfig::default();
        let a = nevd(&env.mdp, &robot, &env.true_weights, &cfg).unwrap();
        let b = nevd(&scaled_features(&env.mdp, c), &robot, &env.true_weights, &cfg).unwrap();
        prop_assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn piob_invariant_under_scaling(seed in any::<u64>(), c in 0.01..100.0f64) {
        let mdp = random_mdp(seed, 10, 3, 3, 0.9);
        let w = RewardWeights::new(vec![0.3, -0.5, 0.8]).unwrap();
        let robot = random_policy(seed, 10, 3);
        let base = random_policy(seed.wrapping_add(7), 10, 3);
        let cfg = RiskConfig::default();
        if let Ok(a) = piob(&mdp, &robot, &base, &w, &cfg) {
            let b = piob(&scaled_features(&mdp, c), &robot, &base, &w, &cfg).unwrap();
            prop_assert!((a - b).abs() < 1e-6 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn piob_arithmetic(robot in -10.0..10.0f64, base in 0.1..10.0f64, sign in prop::bool::ANY) {
        let base = if sign { base } else { -base };
        let x = percent_improvement(robot, base, 1e-8).unwrap();
        prop_assert!((x - (robot - base) / base.abs()).abs() < 1e-12);
        prop_assert_eq!(x > 0.0, robot > base);
    }
}

fn session_bounds(seed: u64, selection: Selection, driving: bool) -> Vec<Option<f64>> {
    let env = if driving {
        generate_driving::<f64>(&DrivingConfig { seed, ..DrivingConfig::default() }).unwrap()
    } else {
        generate_gridworld::<f64>(&GridworldConfig::new(5, 5, 4, seed)).unwrap()
    };
    let mut demonstrator =
        Demonstrator::new(&env.mdp, &env.true_weights, &DemonstratorConfig::noisy(0.1, seed + 1), None).unwrap();
    let mut cfg = SufficiencyConfig::new(Condition::Nevd { epsilon: 0.2 });
    cfg.selection = selection;
    cfg.max_demos = Some(6);
    cfg.mcmc.seed = seed + 2;
    let result = teaching_loop(&env.mdp, &mut demonstrator, &cfg, None).unwrap();
    result.assessments.iter().map(|a| a.bound).collect()
}

#[test]
fn sessions_are_reproducible_end_to_end() {
    for (seed, selection, driving) in [(1, Selection::Passive, false), (2, Selection::Active, false), (3, Selection::Passive, true)] {
        let first = session_bounds(seed, selection, driving);
        let second = session_bounds(seed, selection, driving);
        assert!(!first.is_empty());
        assert_eq!(first, second);
    }
}
