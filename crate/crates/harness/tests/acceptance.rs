//! Acceptance suite. Prints one PASS/FAIL line per criterion. Failed
//! criteria make the binary exit non-zero only when
//! `SUFFICE_ACCEPTANCE_STRICT` is set.

use std::f64::consts::PI;
use std::time::Instant;

use num_bigint::BigInt;
use num_rational::BigRational;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use suffice_core::birl::{run_mcmc, McmcConfig};
use suffice_core::env::{
    generate_gridworld, DemoKind, Demonstrator, DemonstratorConfig, DemonstratorMode, DrivingConfig, GridworldConfig,
};
use suffice_core::mdp::{
    bellman_sweep, demo_log_likelihood, solve_optimal, uniform_random_policy, value_iteration, MdpParts, Policy,
    PolicyEvaluator, RewardWeights, TabularMdp,
};
use suffice_core::risk::{
    exact_binomial_index, gaussian_index, nevd, normalized_regret, percent_improvement, piob, var_confidence_bound,
    var_point_estimate, MetricSamples, RiskConfig,
};
use suffice_core::scalar::log_sum_exp;
use suffice_core::sufficiency::{teaching_loop, Condition, Selection, SufficiencyConfig};
use suffice_core::Demonstration;
use suffice_harness::config::{NEVD_THRESHOLDS, PATIENCES, PIOB_THRESHOLDS};
use suffice_harness::metrics::{f1_score, Counts};
use suffice_harness::{
    lookup, run_replicates, EnvironmentSpec, ExperimentConfig, ExperimentKind, ExperimentResults, MethodGrid,
    ReplicateRecord, Seeding,
};

const MASTER_SEED: u64 = 2024;
const REPLICATES: usize = 100;

struct Suite {
    failures: usize,
}

impl Suite {
    fn check(&mut self, name: &str, pass: bool, detail: impl AsRef<str>) {
        println!("{} {name}: {}", if pass { "PASS" } else { "FAIL" }, detail.as_ref());
        if !pass {
            self.failures += 1;
        }
    }
}

fn run(label: &str, cfg: &ExperimentConfig) -> ExperimentResults {
    let start = Instant::now();
    let results = run_replicates(cfg, None).expect("experiment config is valid");
    eprintln!(
        "  [{label}] {} records, {} failed replicates, {:.1}s",
        results.records.len(),
        results.failures(),
        start.elapsed().as_secs_f64()
    );
    results
}

fn gridworld() -> EnvironmentSpec {
    EnvironmentSpec::Gridworld(GridworldConfig::default())
}

fn sweep(environment: EnvironmentSpec, methods: MethodGrid) -> ExperimentConfig {
    ExperimentConfig {
        environment,
        num_replicates: REPLICATES,
        seed: MASTER_SEED,
        methods,
        ..ExperimentConfig::default()
    }
}

fn metric(results: &ExperimentResults, method: &str, hyper: &str, name: &str) -> f64 {
    lookup(&results.table, method, hyper, name).map_or(f64::NAN, |r| r.mean)
}

fn pooled(records: &[ReplicateRecord], method: &str) -> Counts {
    Counts::from_outcomes(records.iter().filter(|r| r.method == method).filter_map(|r| r.outcome.as_ref()))
}

fn bound_accuracy(suite: &mut Suite) {
    let cfg = ExperimentConfig {
        experiment: ExperimentKind::BoundCurve { max_demos: 9 },
        environment: gridworld(),
        num_replicates: REPLICATES,
        seed: MASTER_SEED,
        ..ExperimentConfig::default()
    };
    let results = run("bound curve", &cfg);
    let per_demo: Vec<(usize, f64, f64, f64)> = (1..=9)
        .map(|d| {
            let hyper = format!("alpha=0.95,demos={d}");
            let get = |m| metric(&results, "nevd_bound", &hyper, m);
            (d, get("accuracy"), get("final_bound"), get("bound_error"))
        })
        .collect();
    let worst = per_demo.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let accuracies: Vec<String> = per_demo.iter().map(|p| format!("{:.2}", p.1)).collect();
    suite.check(
        "bound accuracy >= 0.92 at demos 1..9",
        worst >= 0.92,
        format!("accuracy by demo count [{}]", accuracies.join(", ")),
    );

    let late: Vec<&(usize, f64, f64, f64)> = per_demo.iter().filter(|p| p.0 >= 6).collect();
    let ok = late.iter().all(|p| p.2 <= 0.1 && p.3 <= 0.1);
    let detail: Vec<String> = late.iter().map(|p| format!("{}: bound {:.3} error {:.3}", p.0, p.2, p.3)).collect();
    suite.check("bound tightness <= 0.1 at >= 6 demos", ok, detail.join("; "));
}

fn discrete_f1(suite: &mut Suite, grid: &ExperimentResults, driving: &ExperimentResults) {
    for (label, results) in [("gridworld", grid), ("driving", driving)] {
        let mut ok = true;
        let mut parts = Vec::new();
        for eps in NEVD_THRESHOLDS {
            let ours = metric(results, "nevd", &format!("eps={eps}"), "f1");
            let best_conv = PATIENCES
                .iter()
                .map(|p| metric(results, "convergence", &format!("p={p},eps={eps}"), "f1"))
                .fold(f64::NEG_INFINITY, f64::max);
            ok &= ours >= 0.9 && best_conv < ours;
            parts.push(format!("{eps}: {ours:.3} vs {best_conv:.3}"));
        }
        suite.check(
            &format!("{label} nEVD F1 >= 0.9 and above best convergence"),
            ok,
            parts.join("; "),
        );
    }
}

fn piob_f1(suite: &mut Suite, grid: &ExperimentResults) {
    let targets = [1.00, 0.97, 0.95];
    let f1: Vec<f64> = PIOB_THRESHOLDS
        .iter()
        .map(|eps| metric(grid, "piob", &format!("eps={eps}"), "f1"))
        .collect();
    let close = f1.iter().zip(targets).all(|(f, t)| (f - t).abs() <= 0.10);
    let monotone = f1.windows(2).all(|w| w[1] <= w[0]);
    suite.check(
        "PIOB F1 within 0.10 of reference and non-increasing",
        close && monotone,
        format!("F1 at 20/40/60% = {:.3} / {:.3} / {:.3}", f1[0], f1[1], f1[2]),
    );
}

fn active_learning(suite: &mut Suite, passive: &ExperimentResults) {
    let cfg = ExperimentConfig {
        selection: Selection::Active,
        ..sweep(
            gridworld(),
            MethodGrid {
                nevd: vec![0.3],
                piob: vec![0.4],
                ..MethodGrid::default()
            },
        )
    };
    let active = run("active gridworld", &cfg);
    for (method, hyper) in [("nevd", "eps=0.3"), ("piob", "eps=0.4")] {
        let p_eff = metric(passive, method, hyper, "sample_efficiency");
        let a_eff = metric(&active, method, hyper, "sample_efficiency");
        let reduction = 1.0 - a_eff / p_eff;
        let (p_f1, a_f1) = (metric(passive, method, hyper, "f1"), metric(&active, method, hyper, "f1"));
        suite.check(
            &format!("active {method} {hyper} reduces states >= 5% without F1 loss"),
            reduction >= 0.05 && a_f1 >= p_f1,
            format!(
                "proportion of states {p_eff:.3} -> {a_eff:.3} ({:.1}% reduction), F1 {p_f1:.3} -> {a_f1:.3}",
                100.0 * reduction
            ),
        );
    }
}

fn noise_ablation(suite: &mut Suite, clean: &ExperimentResults) {
    let mut accuracy = vec![(0.0, pooled(&clean.records, "nevd"))];
    for eta in [0.1, 0.2, 0.3] {
        let cfg = ExperimentConfig {
            demonstrator: DemonstratorMode::Noisy { noise_fraction: eta },
            ..sweep(gridworld(), MethodGrid::default())
        };
        accuracy.push((eta, pooled(&run(&format!("noise {eta}"), &cfg).records, "nevd")));
    }
    let acc_ok = accuracy.iter().all(|(_, c)| c.f1().value >= 0.95);
    let fpr_ok = accuracy.iter().filter(|(eta, _)| *eta <= 0.2).all(|(_, c)| c.fpr().unwrap_or(0.0) <= 0.05);
    let detail: Vec<String> = accuracy
        .iter()
        .map(|(eta, c)| format!("{eta}: F1 {:.3} FPR {:.3}", c.f1().value, c.fpr().unwrap_or(0.0)))
        .collect();
    suite.check("noise: F1 >= 0.95 through 0.3", acc_ok, detail.join("; "));
    suite.check("noise: FPR <= 0.05 through 0.2", fpr_ok, detail[..3].join("; "));
}

fn ambiguity(suite: &mut Suite) {
    let mut requested = Vec::new();
    for kind in [DemoKind::Ambiguous, DemoKind::Informative] {
        let cfg = ExperimentConfig {
            num_replicates: 30,
            seeding: Some(Seeding { kind, count: 3 }),
            ..sweep(
                gridworld(),
                MethodGrid {
                    nevd: vec![0.5],
                    ..MethodGrid::default()
                },
            )
        };
        let results = run(&format!("seeding {kind:?}"), &cfg);
        requested.push(metric(&results, "nevd", "eps=0.5", "demos_requested"));
    }
    suite.check(
        "ambiguous seeding requests more demos",
        requested[0] > requested[1],
        format!("mean demos requested: ambiguous {:.2}, informative {:.2}", requested[0], requested[1]),
    );
}

fn rational(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// Smallest 1-based `j` whose lower-tail binomial sum through `j - 1`
/// reaches `1 - delta`, by exact summation of pmf terms.
fn oracle_index(n: usize, alpha: &BigRational, delta: &BigRational) -> usize {
    let one = rational(1, 1);
    let q = &one - alpha;
    let ratio = alpha / &q;
    let mut term = (0..n).fold(one.clone(), |acc, _| acc * &q);
    let mut cdf = rational(0, 1);
    let target = &one - delta;
    for i in 0..=n {
        cdf += &term;
        if cdf >= target {
            return i + 1;
        }
        term = term * &ratio * rational((n - i) as i64, (i + 1) as i64);
    }
    n + 1
}

fn order_statistics(suite: &mut Suite) {
    let delta = rational(1, 20);
    let mut exact_ok = true;
    let mut gauss_ok = true;
    for n in [50, 100, 500] {
        for (num, den) in [(9, 10), (19, 20), (99, 100)] {
            let alpha = num as f64 / den as f64;
            let exact = exact_binomial_index(n, alpha, 0.05);
            exact_ok &= exact == oracle_index(n, &rational(num, den), &delta);
            if n >= 100 {
                gauss_ok &= gaussian_index(n, alpha, 0.05).abs_diff(exact) <= 1;
            }
        }
    }
    let reference = exact_binomial_index(100, 0.95, 0.05);
    suite.check(
        "order-statistic index matches exact oracle",
        exact_ok && gauss_ok && reference == 99,
        format!("exact match {exact_ok}, gaussian within 1 {gauss_ok}, n=100 alpha=0.95 index {reference}"),
    );
}

fn mcmc_fidelity(suite: &mut Suite) {
    const BINS: usize = 36;
    let bin = |t: f64| ((t / (2.0 * PI) * BINS as f64) as usize).min(BINS - 1);
    let mut worst: f64 = 0.0;
    for seed in 0..3 {
        let env = generate_gridworld::<f64>(&GridworldConfig::new(5, 5, 2, seed)).unwrap();
        let demos = Demonstration::new(
            Demonstrator::new(&env.mdp, &env.true_weights, &DemonstratorConfig::optimal(seed), None)
                .unwrap()
                .take(5)
                .collect(),
        );
        let grid: Vec<f64> = (0..360).map(|i| (i as f64 + 0.5) * 2.0 * PI / 360.0).collect();
        let log_post: Vec<f64> = grid
            .iter()
            .map(|&t| {
                let w = RewardWeights::new(vec![t.cos(), t.sin()]).unwrap();
                demo_log_likelihood(&env.mdp, &demos, &w, 10.0).unwrap()
            })
            .collect();
        let z = log_sum_exp(&log_post);
        let mut exact = [0.0; BINS];
        for (&t, lp) in grid.iter().zip(&log_post) {
            exact[bin(t)] += (lp - z).exp();
        }
        let batch = run_mcmc(&env.mdp, &demos, &McmcConfig::default().with_seed(100 + seed)).unwrap();
        let mut hist = [0.0; BINS];
        for w in &batch.samples {
            let w = w.as_slice();
            hist[bin(w[1].atan2(w[0]).rem_euclid(2.0 * PI))] += 1.0 / batch.len() as f64;
        }
        let tv = 0.5 * hist.iter().zip(&exact).map(|(a, b)| (a - b).abs()).sum::<f64>();
        worst = worst.max(tv);
    }
    suite.check("MCMC angular marginal TV <= 0.1", worst <= 0.1, format!("worst TV over 3 MDPs {worst:.4}"));
}

fn random_mdp(seed: u64, n: usize, k: usize, gamma: f64) -> TabularMdp<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transitions = Vec::new();
    for s in 0..n {
        for a in 0..3 {
            let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>().powi(3)).collect();
            let total: f64 = raw.iter().sum();
            transitions.extend(raw.into_iter().enumerate().map(|(next, p)| (s, a, next, p / total)));
        }
    }
    TabularMdp::new(MdpParts {
        num_states: n,
        num_actions: 3,
        transitions,
        features: (0..n).map(|_| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
        discount: gamma,
        initial_dist: vec![1.0 / n as f64; n],
        terminal_states: vec![],
    })
    .unwrap()
}

fn random_policy(seed: u64, n: usize) -> Policy<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    Policy::deterministic(&(0..n).map(|_| rng.random_range(0..3)).collect::<Vec<_>>(), 3).unwrap()
}

fn scaled_features(mdp: &TabularMdp<f64>, c: f64) -> TabularMdp<f64> {
    TabularMdp::new(MdpParts {
        num_states: mdp.num_states(),
        num_actions: mdp.num_actions(),
        transitions: mdp.transition_triples().collect(),
        features: (0..mdp.num_states()).map(|s| mdp.features(s).iter().map(|x| x * c).collect()).collect(),
        discount: mdp.discount(),
        initial_dist: mdp.initial_dist().to_vec(),
        terminal_states: vec![],
    })
    .unwrap()
}

fn nevd_of_rewards(mdp: &TabularMdp<f64>, robot: &Policy<f64>, rewards: &[f64]) -> f64 {
    let ret = |v: Vec<f64>| mdp.initial_dist().iter().zip(&v).map(|(p, x)| p * x).sum::<f64>();
    let optimal = ret(solve_optimal(mdp, rewards, None).values);
    let robot = ret(PolicyEvaluator::new(mdp, robot).unwrap().evaluate(rewards));
    let random = ret(PolicyEvaluator::new(mdp, &uniform_random_policy(mdp)).unwrap().evaluate(rewards));
    normalized_regret(optimal, robot, random, 1e-8).unwrap()
}

fn property<S: Strategy>(suite: &mut Suite, name: &str, strategy: S, test: impl Fn(S::Value) -> bool)
where
    S::Value: std::fmt::Debug,
{
    let mut runner = TestRunner::new(Config {
        cases: 32,
        failure_persistence: None,
        ..Config::default()
    });
    let result = runner.run(&strategy, |v| {
        prop_assert!(test(v));
        Ok(())
    });
    let detail = match &result {
        Ok(()) => "32 cases".to_string(),
        Err(e) => e.to_string(),
    };
    suite.check(&format!("property: {name}"), result.is_ok(), detail);
}

fn properties(suite: &mut Suite) {
    property(suite, "Bellman backup contraction", (any::<u64>(), 0.0..0.99f64), |(seed, gamma)| {
        let mdp = random_mdp(seed, 8, 3, gamma);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let r: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let u: Vec<f64> = (0..8).map(|_| rng.random_range(-10.0..10.0)).collect();
        let v: Vec<f64> = (0..8).map(|_| rng.random_range(-10.0..10.0)).collect();
        let sup = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        sup(&bellman_sweep(&mdp, &r, &u), &bellman_sweep(&mdp, &r, &v)) <= gamma * sup(&u, &v) + 1e-12
    });

    let values = prop::collection::vec(-10.0..10.0f64, 2..300);
    property(
        suite,
        "VaR monotone in alpha",
        (values.clone(), 0.01..0.99f64, 0.01..0.99f64),
        |(v, a, b)| {
            let s = MetricSamples::new(v).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            var_point_estimate(&s, lo) <= var_point_estimate(&s, hi)
        },
    );
    property(
        suite,
        "confidence bound >= point estimate",
        (values, 0.01..0.99f64, 0.01..0.49f64),
        |(v, alpha, delta)| {
            let s = MetricSamples::new(v).unwrap();
            let cfg = RiskConfig {
                alpha,
                delta,
                ..RiskConfig::default()
            };
            var_confidence_bound(&s, &cfg).unwrap().value >= var_point_estimate(&s, alpha)
        },
    );
    property(suite, "nEVD endpoints", 0u64..500, |seed| {
        let env = generate_gridworld::<f64>(&GridworldConfig::new(5, 5, 4, seed)).unwrap();
        let cfg = RiskConfig::default();
        let optimal = value_iteration(&env.mdp, &env.true_weights, 1e-10).unwrap().1;
        let random = uniform_random_policy(&env.mdp);
        nevd(&env.mdp, &optimal, &env.true_weights, &cfg).unwrap().abs() < 1e-6
            && (nevd(&env.mdp, &random, &env.true_weights, &cfg).unwrap() - 1.0).abs() < 1e-6
    });
    property(
        suite,
        "nEVD invariant under scaling and shift",
        (any::<u64>(), 0.01..100.0f64, -5.0..5.0f64),
        |(seed, c, shift)| {
            let mdp = random_mdp(seed, 10, 3, 0.9);
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(3));
            let r: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
            let robot = random_policy(seed, 10);
            let base = nevd_of_rewards(&mdp, &robot, &r);
            let scaled: Vec<f64> = r.iter().map(|x| c * x).collect();
            let shifted: Vec<f64> = r.iter().map(|x| x + shift).collect();
            (nevd_of_rewards(&mdp, &robot, &scaled) - base).abs() < 1e-6
                && (nevd_of_rewards(&mdp, &robot, &shifted) - base).abs() < 1e-6
        },
    );
    property(suite, "PIOB invariant under scaling", (any::<u64>(), 0.01..100.0f64), |(seed, c)| {
        let mdp = random_mdp(seed, 10, 3, 0.9);
        let w = RewardWeights::new(vec![0.3, -0.5, 0.8]).unwrap();
        let robot = random_policy(seed, 10);
        let base = random_policy(seed.wrapping_add(7), 10);
        let cfg = RiskConfig::default();
        match piob(&mdp, &robot, &base, &w, &cfg) {
            Ok(a) => (piob(&scaled_features(&mdp, c), &robot, &base, &w, &cfg).unwrap() - a).abs() < 1e-6 * (1.0 + a.abs()),
            Err(_) => true,
        }
    });
    property(suite, "PIOB arithmetic", (-10.0..10.0f64, 0.1..10.0f64), |(robot, base)| {
        let x = percent_improvement(robot, base, 1e-8).unwrap();
        (x - (robot - base) / base).abs() < 1e-12
    });
    property(suite, "F1 arithmetic", (0usize..50, 0usize..50, 0usize..50), |(tp, fp, fn_)| {
        let f = f1_score(tp, fp, fn_);
        if tp + fp + fn_ == 0 {
            return !f.defined && f.value == 0.0;
        }
        let direct = 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;
        f.defined && (f.value - direct).abs() < 1e-12
    });

    let session = |seed: u64, driving: bool| -> Vec<Option<f64>> {
        let env = if driving {
            suffice_core::env::generate_driving::<f64>(&DrivingConfig {
                seed,
                ..DrivingConfig::default()
            })
            .unwrap()
        } else {
            generate_gridworld::<f64>(&GridworldConfig::new(5, 5, 4, seed)).unwrap()
        };
        let mut demonstrator =
            Demonstrator::new(&env.mdp, &env.true_weights, &DemonstratorConfig::noisy(0.1, seed + 1), None).unwrap();
        let mut cfg = SufficiencyConfig::new(Condition::Nevd { epsilon: 0.2 });
        cfg.max_demos = Some(4);
        cfg.mcmc.seed = seed + 2;
        let result = teaching_loop(&env.mdp, &mut demonstrator, &cfg, None).unwrap();
        result.assessments.iter().map(|a| a.bound).collect()
    };
    let deterministic = [(1, false), (2, true)].iter().all(|&(s, d)| session(s, d) == session(s, d));
    suite.check("property: seed determinism end to end", deterministic, "gridworld and driving sessions");
}

fn main() {
    let start = Instant::now();
    let mut suite = Suite { failures: 0 };

    order_statistics(&mut suite);
    mcmc_fidelity(&mut suite);
    properties(&mut suite);
    bound_accuracy(&mut suite);

    let grid = run(
        "gridworld sweep",
        &sweep(
            gridworld(),
            MethodGrid {
                piob: PIOB_THRESHOLDS.to_vec(),
                convergence: PATIENCES.to_vec(),
                ..MethodGrid::default()
            },
        ),
    );
    let driving = run(
        "driving sweep",
        &sweep(
            EnvironmentSpec::Driving(DrivingConfig::default()),
            MethodGrid {
                convergence: PATIENCES.to_vec(),
                ..MethodGrid::default()
            },
        ),
    );
    discrete_f1(&mut suite, &grid, &driving);
    piob_f1(&mut suite, &grid);
    active_learning(&mut suite, &grid);
    noise_ablation(&mut suite, &grid);
    ambiguity(&mut suite);

    println!(
        "{} criteria failed; total {:.0}s",
        suite.failures,
        start.elapsed().as_secs_f64()
    );
    if suite.failures > 0 && std::env::var_os("SUFFICE_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
