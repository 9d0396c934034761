use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use suffice_core::sufficiency::ConditionKind;

use crate::record::{AggregateRow, ReplicateRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Outcome {
    Tp,
    Fp,
    Fn,
    Tn,
}

/// Scores a declaration against the ground-truth metric. Regret-style
/// conditions succeed at or below `epsilon`, improvement at or above it.
pub fn classify_outcome(declared: bool, true_metric: f64, epsilon: f64, condition: ConditionKind) -> Outcome {
    let good = match condition {
        ConditionKind::Piob => true_metric >= epsilon,
        _ => true_metric <= epsilon,
    };
    match (declared, good) {
        (true, true) => Outcome::Tp,
        (true, false) => Outcome::Fp,
        (false, true) => Outcome::Fn,
        (false, false) => Outcome::Tn,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1 {
    pub value: f64,
    /// False when there were no positives of any kind; the value is then 0.
    pub defined: bool,
}

/// `TP / (TP + (FP + FN) / 2)`.
pub fn f1_score(tp: usize, fp: usize, fn_: usize) -> F1 {
    if tp + fp + fn_ == 0 {
        return F1 {
            value: 0.0,
            defined: false,
        };
    }
    F1 {
        value: tp as f64 / (tp as f64 + 0.5 * (fp + fn_) as f64),
        defined: true,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Counts {
    pub fn from_outcomes<'a>(outcomes: impl IntoIterator<Item = &'a Outcome>) -> Self {
        let mut c = Self::default();
        for o in outcomes {
            match o {
                Outcome::Tp => c.tp += 1,
                Outcome::Fp => c.fp += 1,
                Outcome::Fn => c.fn_ += 1,
                Outcome::Tn => c.tn += 1,
            }
        }
        c
    }

    pub fn f1(&self) -> F1 {
        f1_score(self.tp, self.fp, self.fn_)
    }

    pub fn tpr(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn fpr(&self) -> Option<f64> {
        ratio(self.fp, self.fp + self.tn)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

fn ratio(a: usize, b: usize) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation over `sqrt(n)`; zero for a single value.
pub fn standard_error(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

/// Leave-one-out jackknife standard error of the F1 score.
pub fn f1_jackknife_stderr(outcomes: &[Outcome]) -> f64 {
    let n = outcomes.len();
    if n < 2 {
        return 0.0;
    }
    let full = Counts::from_outcomes(outcomes);
    let leave_one_out: Vec<f64> = outcomes
        .iter()
        .map(|o| {
            let mut c = full;
            match o {
                Outcome::Tp => c.tp -= 1,
                Outcome::Fp => c.fp -= 1,
                Outcome::Fn => c.fn_ -= 1,
                Outcome::Tn => c.tn -= 1,
            }
            c.f1().value
        })
        .collect();
    let m = mean(&leave_one_out);
    let ss: f64 = leave_one_out.iter().map(|x| (x - m).powi(2)).sum();
    ((n - 1) as f64 / n as f64 * ss).sqrt()
}

fn summary_row(method: &str, hyper: &str, metric: &str, values: &[f64]) -> Option<AggregateRow> {
    (!values.is_empty()).then(|| AggregateRow {
        method: method.to_string(),
        hyperparameter: hyper.to_string(),
        metric: metric.to_string(),
        mean: mean(values),
        stderr: standard_error(values),
        n: values.len(),
    })
}

/// Aggregate table over successful records, grouped by method and
/// hyperparameter in first-seen order. Metrics without any data are omitted.
pub fn aggregate(records: &[ReplicateRecord]) -> Vec<AggregateRow> {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: HashMap<(String, String), Vec<&ReplicateRecord>> = HashMap::new();
    for r in records.iter().filter(|r| r.error.is_none()) {
        let key = (r.method.clone(), r.hyperparameter.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }

    let mut rows = Vec::new();
    for key in order {
        let group = &groups[&key];
        let (method, hyper) = (&key.0, &key.1);
        let outcomes: Vec<Outcome> = group.iter().filter_map(|r| r.outcome).collect();
        if !outcomes.is_empty() {
            let counts = Counts::from_outcomes(&outcomes);
            rows.push(AggregateRow {
                method: method.clone(),
                hyperparameter: hyper.clone(),
                metric: "f1".into(),
                mean: counts.f1().value,
                stderr: f1_jackknife_stderr(&outcomes),
                n: outcomes.len(),
            });
            let indicator = |hit: Outcome, among: &[Outcome]| -> Vec<f64> {
                outcomes
                    .iter()
                    .filter(|o| among.contains(o))
                    .map(|&o| if o == hit { 1.0 } else { 0.0 })
                    .collect()
            };
            rows.extend(summary_row(method, hyper, "tpr", &indicator(Outcome::Tp, &[Outcome::Tp, Outcome::Fn])));
            rows.extend(summary_row(method, hyper, "fpr", &indicator(Outcome::Fp, &[Outcome::Fp, Outcome::Tn])));
        }
        let collect = |f: &dyn Fn(&ReplicateRecord) -> Option<f64>| -> Vec<f64> {
            group.iter().filter_map(|r| f(r)).collect()
        };
        let metrics: [(&str, Vec<f64>); 10] = [
            ("declared", collect(&|r| Some(if r.declared { 1.0 } else { 0.0 }))),
            ("accuracy", collect(&|r| r.bound_correct.map(|c| if c { 1.0 } else { 0.0 }))),
            ("sample_efficiency", collect(&|r| Some(r.sample_efficiency))),
            ("demos_used", collect(&|r| Some(r.demos_used as f64))),
            ("demos_requested", collect(&|r| Some(r.demos_requested as f64))),
            ("final_bound", collect(&|r| r.final_bound)),
            ("bound_error", collect(&|r| r.bound_error)),
            ("true_nevd", collect(&|r| r.true_nevd)),
            ("true_piob", collect(&|r| r.true_piob)),
            ("policy_optimality", collect(&|r| Some(r.policy_optimality))),
        ];
        for (name, values) in metrics {
            rows.extend(summary_row(method, hyper, name, &values));
        }
    }
    rows
}

/// Looks up one aggregate value.
pub fn lookup<'a>(table: &'a [AggregateRow], method: &str, hyperparameter: &str, metric: &str) -> Option<&'a AggregateRow> {
    table
        .iter()
        .find(|r| r.method == method && r.hyperparameter == hyperparameter && r.metric == metric)
}
