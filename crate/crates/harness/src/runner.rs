use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use suffice_core::env::{ambiguity_demo_set, Demonstrator, DemonstratorConfig};
use suffice_core::mdp::{solve_optimal, uniform_random_policy, Policy, PolicyEvaluator};
use suffice_core::risk::{normalized_regret, percent_improvement, PolicyComparison, RiskConfig};
use suffice_core::sufficiency::{stable_rounds, BoundReport, Condition, ConditionKind, SufficiencyConfig, Teacher};
use suffice_core::{derive_seed, Environment, Error as CoreError, Mdp, Weights};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{HarnessError, Result};
use crate::metrics::{aggregate, classify_outcome};
use crate::record::{export_rows, AggregateRow, ExportFormat, ReplicateRecord};

/// Seeds of one replicate, shared by every method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicateSeeds {
    pub environment: u64,
    pub demonstrator: u64,
    pub mcmc: u64,
}

impl ReplicateSeeds {
    pub fn derive(master: u64, replicate: usize) -> Self {
        let r = 3 * replicate as u64;
        Self {
            environment: derive_seed(master, r),
            demonstrator: derive_seed(master, r + 1),
            mcmc: derive_seed(master, r + 2),
        }
    }
}

/// Ground-truth quality of a learned policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truth {
    pub nevd: Option<f64>,
    pub piob: Option<f64>,
    pub policy_optimality: f64,
}

struct GroundTruth<'a> {
    mdp: &'a Mdp,
    weights: &'a Weights,
    q_star: Vec<f64>,
    base: PolicyEvaluator<f64>,
}

impl<'a> GroundTruth<'a> {
    fn new(mdp: &'a Mdp, weights: &'a Weights) -> Result<Self> {
        let rewards = mdp.rewards(weights)?;
        Ok(Self {
            mdp,
            weights,
            q_star: solve_optimal(mdp, &rewards, None).q,
            base: PolicyEvaluator::new(mdp, &uniform_random_policy(mdp))?,
        })
    }

    fn evaluate(&self, policy: &Policy<f64>, tolerance: f64) -> Result<Truth> {
        let values = PolicyComparison::new(self.mdp, policy)?.evaluate(self.weights)?;
        let s0 = self.mdp.initial_dist();
        let ret = |v: &[f64]| s0.iter().zip(v).map(|(p, x)| p * x).sum::<f64>();
        let robot = ret(&values.robot);
        let nevd = normalized_regret(ret(&values.optimal), robot, ret(&values.random), tolerance).ok();
        let piob = percent_improvement(robot, ret(&self.base.evaluate(&values.rewards)), tolerance).ok();

        let a = self.mdp.num_actions();
        let actions = policy.greedy_actions();
        let optimal = actions
            .iter()
            .enumerate()
            .filter(|&(s, &act)| {
                let row = &self.q_star[s * a..(s + 1) * a];
                let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                best - row[act] <= 1e-9 * (1.0 + best.abs())
            })
            .count();
        Ok(Truth {
            nevd,
            piob,
            policy_optimality: optimal as f64 / self.mdp.num_states() as f64,
        })
    }
}

/// State of a session after one round.
#[derive(Debug, Clone)]
pub struct RoundRecord {
    pub demos_used: usize,
    pub demos_requested: usize,
    pub unique_states: usize,
    /// Consecutive earlier rounds with the same MAP action map.
    pub stable_rounds: usize,
    /// nEVD upper bounds, one per configured alpha.
    pub nevd: Vec<BoundReport>,
    /// PIOB lower bounds against the uniform random policy, per alpha.
    pub piob: Vec<BoundReport>,
    /// The session's own stopping decision (used by validation runs).
    pub sufficient: bool,
    pub truth: Truth,
}

fn risk_at(cfg: &ExperimentConfig, alpha: f64) -> RiskConfig {
    RiskConfig {
        alpha,
        delta: cfg.delta,
        ..RiskConfig::default()
    }
}

/// Drives one session on `env` until `done` or the demo cap, recording every
/// round. The trajectory depends on the condition only through validation
/// hold-outs.
pub fn run_trajectory(
    cfg: &ExperimentConfig,
    env: &Environment,
    seeds: &ReplicateSeeds,
    condition: Condition,
    done: &dyn Fn(&[RoundRecord]) -> bool,
) -> Result<Vec<RoundRecord>> {
    let mdp = &env.mdp;
    let risks: Vec<RiskConfig> = cfg.alphas.iter().map(|&a| risk_at(cfg, a)).collect();
    let session = SufficiencyConfig {
        condition,
        risk: risks[0].clone(),
        mcmc: cfg.mcmc.with_seed(seeds.mcmc),
        selection: cfg.selection,
        max_demos: cfg.max_demos,
    };
    let base = uniform_random_policy(mdp);
    let mut teacher = Teacher::new(mdp.clone(), session, Some(&base))?;
    let truth = GroundTruth::new(mdp, &env.true_weights)?;
    let demo_cfg = DemonstratorConfig {
        mode: cfg.demonstrator,
        seed: seeds.demonstrator,
    };
    let mut demonstrator = Demonstrator::new(mdp, &env.true_weights, &demo_cfg, None)?;

    let seeded = match cfg.seeding {
        Some(s) => {
            let demos = ambiguity_demo_set(mdp, &env.true_weights, s.kind, s.count)?;
            teacher.seed_demos(&demos)?;
            demos.len()
        }
        None => 0,
    };
    let cap = match cfg.experiment {
        ExperimentKind::BoundCurve { max_demos } => max_demos + seeded,
        ExperimentKind::Sweep => cfg.max_demos.unwrap_or(mdp.num_states()),
    };

    let mut rounds = Vec::new();
    while teacher.demos_used() < cap {
        let pair = match teacher.next_query() {
            Ok(Some(state)) => demonstrator.respond(state),
            Ok(None) => match demonstrator.next_pair() {
                Ok(pair) => pair,
                Err(CoreError::StreamExhausted) => break,
                Err(e) => return Err(e.into()),
            },
            Err(CoreError::StreamExhausted) => break,
            Err(e) => return Err(e.into()),
        };
        let report = teacher.observe(pair)?;
        let metrics = teacher.metrics().expect("a posterior exists after the first round");
        let policy = &teacher.batch().expect("a posterior exists after the first round").map_policy;
        let nevd = risks.iter().map(|r| metrics.nevd.upper_bound(r)).collect::<Result<_, _>>()?;
        let piob = risks
            .iter()
            .map(|r| metrics.piob.as_ref().expect("baseline supplied").lower_bound(r))
            .collect::<Result<_, _>>()?;
        rounds.push(RoundRecord {
            demos_used: teacher.demos_used(),
            demos_requested: teacher.demos_used() - seeded,
            unique_states: report.assessment.unique_states,
            stable_rounds: stable_rounds(teacher.policy_history()),
            nevd,
            piob,
            sufficient: report.assessment.sufficient,
            truth: truth.evaluate(policy, risks[0].degenerate_tolerance)?,
        });
        if done(&rounds) {
            break;
        }
    }
    if rounds.is_empty() {
        return Err(HarnessError::Config("session ended before any demonstration".into()));
    }
    Ok(rounds)
}

/// One stopping rule of a sweep, evaluated on shared trajectories.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Variant {
    Nevd { epsilon: f64, alpha: usize },
    Piob { epsilon: f64, alpha: usize },
    Convergence { patience: usize },
}

impl Variant {
    pub fn satisfied(&self, round: &RoundRecord) -> bool {
        match *self {
            Variant::Nevd { epsilon, alpha } => round.nevd[alpha].certified_value().is_some_and(|b| b <= epsilon),
            Variant::Piob { epsilon, alpha } => round.piob[alpha].certified_value().is_some_and(|b| b >= epsilon),
            Variant::Convergence { patience } => round.stable_rounds >= patience,
        }
    }

    /// 0-based round at which the rule stops, if it ever does.
    pub fn stop_index(&self, rounds: &[RoundRecord]) -> Option<usize> {
        rounds.iter().position(|r| self.satisfied(r))
    }
}

fn alpha_suffix(cfg: &ExperimentConfig, alpha: usize) -> String {
    if cfg.alphas.len() > 1 {
        format!(",alpha={}", cfg.alphas[alpha])
    } else {
        String::new()
    }
}

pub fn sweep_variants(cfg: &ExperimentConfig) -> Vec<Variant> {
    let mut out = Vec::new();
    for alpha in 0..cfg.alphas.len() {
        out.extend(cfg.methods.nevd.iter().map(|&epsilon| Variant::Nevd { epsilon, alpha }));
        out.extend(cfg.methods.piob.iter().map(|&epsilon| Variant::Piob { epsilon, alpha }));
    }
    out.extend(cfg.methods.convergence.iter().map(|&patience| Variant::Convergence { patience }));
    out
}

struct Stop<'a> {
    round: &'a RoundRecord,
    declared: bool,
    num_states: usize,
}

impl Stop<'_> {
    fn at(rounds: &[RoundRecord], index: Option<usize>, num_states: usize) -> Stop<'_> {
        Stop {
            round: &rounds[index.unwrap_or(rounds.len() - 1)],
            declared: index.is_some(),
            num_states,
        }
    }

    fn record(&self, method: &str, hyperparameter: String, replicate: usize) -> ReplicateRecord {
        let r = self.round;
        ReplicateRecord {
            method: method.into(),
            hyperparameter,
            replicate,
            epsilon: None,
            declared: self.declared,
            demos_used: r.demos_used,
            demos_requested: r.demos_requested,
            unique_states: r.unique_states,
            sample_efficiency: r.unique_states as f64 / self.num_states as f64,
            final_bound: None,
            true_nevd: r.truth.nevd,
            true_piob: r.truth.piob,
            bound_error: None,
            bound_correct: None,
            policy_optimality: r.truth.policy_optimality,
            outcome: None,
            error: None,
        }
    }

    fn scored(&self, mut rec: ReplicateRecord, epsilon: f64, kind: ConditionKind) -> ReplicateRecord {
        let truth = match kind {
            ConditionKind::Piob => rec.true_piob,
            _ => rec.true_nevd,
        };
        rec.epsilon = Some(epsilon);
        rec.outcome = truth.map(|t| classify_outcome(self.declared, t, epsilon, kind));
        rec
    }

    fn with_bound(mut rec: ReplicateRecord, bound: Option<f64>, truth: Option<f64>, upper: bool) -> ReplicateRecord {
        rec.final_bound = bound;
        if let (Some(b), Some(t)) = (bound, truth) {
            rec.bound_error = Some(b - t);
            rec.bound_correct = Some(if upper { b >= t } else { b <= t });
        }
        rec
    }
}

fn sweep_records(
    cfg: &ExperimentConfig,
    env: &Environment,
    seeds: &ReplicateSeeds,
    replicate: usize,
) -> Result<Vec<ReplicateRecord>> {
    let n = env.mdp.num_states();
    let thresholds = cfg.methods.baseline_thresholds();
    let variants = sweep_variants(cfg);
    let mut records = Vec::new();

    if !variants.is_empty() {
        let all_stopped = |rounds: &[RoundRecord]| variants.iter().all(|v| v.stop_index(rounds).is_some());
        let placeholder = Condition::Nevd { epsilon: 1.0 };
        let rounds = run_trajectory(cfg, env, seeds, placeholder, &all_stopped)?;
        for v in &variants {
            let stop = Stop::at(&rounds, v.stop_index(&rounds), n);
            match *v {
                Variant::Nevd { epsilon, alpha } => {
                    let rec = stop.record("nevd", format!("eps={epsilon}{}", alpha_suffix(cfg, alpha)), replicate);
                    let bound = stop.round.nevd[alpha].bound.map(|b| b.value);
                    let truth = rec.true_nevd;
                    records.push(stop.scored(Stop::with_bound(rec, bound, truth, true), epsilon, ConditionKind::Nevd));
                }
                Variant::Piob { epsilon, alpha } => {
                    let rec = stop.record("piob", format!("eps={epsilon}{}", alpha_suffix(cfg, alpha)), replicate);
                    let bound = stop.round.piob[alpha].bound.map(|b| b.value);
                    let truth = rec.true_piob;
                    records.push(stop.scored(Stop::with_bound(rec, bound, truth, false), epsilon, ConditionKind::Piob));
                }
                Variant::Convergence { patience } => {
                    for &eps in &thresholds {
                        let rec = stop.record("convergence", format!("p={patience},eps={eps}"), replicate);
                        records.push(stop.scored(rec, eps, ConditionKind::Convergence));
                    }
                }
            }
        }
    }

    for &interval in &cfg.methods.validation {
        let condition = Condition::Validation { interval };
        let rounds = run_trajectory(cfg, env, seeds, condition, &|r: &[RoundRecord]| {
            r.last().is_some_and(|x| x.sufficient)
        })?;
        let index = rounds.iter().position(|r| r.sufficient);
        let stop = Stop::at(&rounds, index, n);
        for &eps in &thresholds {
            let rec = stop.record("validation", format!("i={interval},eps={eps}"), replicate);
            records.push(stop.scored(rec, eps, ConditionKind::Validation));
        }
    }
    Ok(records)
}

fn curve_records(
    cfg: &ExperimentConfig,
    env: &Environment,
    seeds: &ReplicateSeeds,
    replicate: usize,
    max_demos: usize,
) -> Result<Vec<ReplicateRecord>> {
    let n = env.mdp.num_states();
    let rounds = run_trajectory(cfg, env, seeds, Condition::Nevd { epsilon: 1.0 }, &|r: &[RoundRecord]| {
        r.len() >= max_demos
    })?;
    let mut records = Vec::new();
    for (t, round) in rounds.iter().enumerate() {
        let stop = Stop {
            round,
            declared: false,
            num_states: n,
        };
        for (a, alpha) in cfg.alphas.iter().enumerate() {
            let rec = stop.record("nevd_bound", format!("alpha={alpha},demos={}", t + 1), replicate);
            let truth = rec.true_nevd;
            records.push(Stop::with_bound(rec, round.nevd[a].bound.map(|b| b.value), truth, true));
        }
    }
    Ok(records)
}

/// All records of one replicate; failures become a single error record.
pub fn run_replicate(cfg: &ExperimentConfig, replicate: usize) -> Vec<ReplicateRecord> {
    let seeds = ReplicateSeeds::derive(cfg.seed, replicate);
    let result = cfg.environment.build(seeds.environment).and_then(|env| match cfg.experiment {
        ExperimentKind::Sweep => sweep_records(cfg, &env, &seeds, replicate),
        ExperimentKind::BoundCurve { max_demos } => curve_records(cfg, &env, &seeds, replicate, max_demos),
    });
    match result {
        Ok(records) => records,
        Err(e) => {
            tracing::warn!(replicate, error = %e, "replicate failed");
            vec![ReplicateRecord::failed("replicate", "", replicate, e.to_string())]
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentResults {
    pub config: ExperimentConfig,
    pub records: Vec<ReplicateRecord>,
    pub table: Vec<AggregateRow>,
}

/// Runs every replicate on `jobs` worker threads (all cores when `None`).
pub fn run_replicates(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<ExperimentResults> {
    cfg.validate()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = jobs {
        pool = pool.num_threads(jobs.max(1));
    }
    let pool = pool
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    let records: Vec<ReplicateRecord> = pool.install(|| {
        (0..cfg.num_replicates)
            .into_par_iter()
            .map(|r| run_replicate(cfg, r))
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    });
    let table = aggregate(&records);
    Ok(ExperimentResults {
        config: cfg.clone(),
        records,
        table,
    })
}

impl ExperimentResults {
    pub fn failures(&self) -> usize {
        self.records.iter().filter(|r| r.error.is_some()).count()
    }

    /// Writes `records.{csv,json}`, `aggregate.{csv,json}` and `config.json`
    /// into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for format in [ExportFormat::Csv, ExportFormat::Json] {
            export_rows(&self.records, dir.join(format!("records.{}", format.extension())), format)?;
            export_rows(&self.table, dir.join(format!("aggregate.{}", format.extension())), format)?;
        }
        std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(&self.config)?)?;
        Ok(())
    }
}
