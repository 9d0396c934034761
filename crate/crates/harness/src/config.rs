use std::path::Path;

use serde::{Deserialize, Serialize};
use suffice_core::birl::McmcConfig;
use suffice_core::env::{generate_driving, generate_gridworld, DemoKind, DemonstratorMode, DrivingConfig, GridworldConfig};
use suffice_core::sufficiency::Selection;
use suffice_core::Environment;

use crate::error::{HarnessError, Result};

pub const NEVD_THRESHOLDS: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];
pub const PIOB_THRESHOLDS: [f64; 3] = [0.2, 0.4, 0.6];
pub const PATIENCES: [usize; 5] = [1, 2, 3, 4, 5];
pub const INTERVALS: [usize; 5] = [3, 4, 5, 6, 7];

/// Environment family; the replicate seed fills in `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvironmentSpec {
    Gridworld(GridworldConfig),
    Driving(DrivingConfig),
}

impl Default for EnvironmentSpec {
    fn default() -> Self {
        EnvironmentSpec::Gridworld(GridworldConfig::default())
    }
}

impl EnvironmentSpec {
    pub fn build(&self, seed: u64) -> Result<Environment> {
        Ok(match self {
            EnvironmentSpec::Gridworld(cfg) => generate_gridworld(&GridworldConfig { seed, ..cfg.clone() })?,
            EnvironmentSpec::Driving(cfg) => generate_driving(&DrivingConfig { seed, ..cfg.clone() })?,
        })
    }

    pub fn label(&self) -> &'static str {
        match self {
            EnvironmentSpec::Gridworld(_) => "gridworld",
            EnvironmentSpec::Driving(_) => "driving",
        }
    }
}

/// Stopping methods and hyperparameters compared on every replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodGrid {
    /// nEVD thresholds.
    pub nevd: Vec<f64>,
    /// PIOB thresholds against the uniform random policy.
    pub piob: Vec<f64>,
    /// Convergence patience values.
    pub convergence: Vec<usize>,
    /// Validation hold-out intervals.
    pub validation: Vec<usize>,
    /// Regret thresholds the baselines are scored against; defaults to
    /// `nevd`, or the standard grid when that is empty.
    pub evaluation_thresholds: Vec<f64>,
}

impl Default for MethodGrid {
    fn default() -> Self {
        Self {
            nevd: NEVD_THRESHOLDS.to_vec(),
            piob: Vec::new(),
            convergence: Vec::new(),
            validation: Vec::new(),
            evaluation_thresholds: Vec::new(),
        }
    }
}

impl MethodGrid {
    pub fn baseline_thresholds(&self) -> Vec<f64> {
        if !self.evaluation_thresholds.is_empty() {
            self.evaluation_thresholds.clone()
        } else if !self.nevd.is_empty() {
            self.nevd.clone()
        } else {
            NEVD_THRESHOLDS.to_vec()
        }
    }

    fn is_empty(&self) -> bool {
        self.nevd.is_empty() && self.piob.is_empty() && self.convergence.is_empty() && self.validation.is_empty()
    }
}

/// Demonstrations handed over before the first round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Seeding {
    pub kind: DemoKind,
    pub count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Run every method to its stopping point and score the declarations.
    #[default]
    Sweep,
    /// Record bounds and ground truth after each of the first `max_demos`
    /// demonstrations, without stopping.
    BoundCurve { max_demos: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub experiment: ExperimentKind,
    pub environment: EnvironmentSpec,
    pub num_replicates: usize,
    /// Master seed; replicate `r` derives its MDP, demonstrator and MCMC
    /// seeds from it, identically for every method.
    pub seed: u64,
    pub methods: MethodGrid,
    pub alphas: Vec<f64>,
    pub delta: f64,
    pub demonstrator: DemonstratorMode,
    pub selection: Selection,
    pub seeding: Option<Seeding>,
    pub mcmc: McmcConfig,
    /// Defaults to the number of states.
    pub max_demos: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            experiment: ExperimentKind::Sweep,
            environment: EnvironmentSpec::default(),
            num_replicates: 100,
            seed: 0,
            methods: MethodGrid::default(),
            alphas: vec![0.95],
            delta: 0.05,
            demonstrator: DemonstratorMode::Optimal,
            selection: Selection::Passive,
            seeding: None,
            mcmc: McmcConfig::default(),
            max_demos: None,
        }
    }
}

impl ExperimentConfig {
    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(HarnessError::Config(msg.to_string()));
        if self.num_replicates == 0 {
            return fail("num_replicates must be at least 1");
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return fail("alphas must be non-empty and lie in (0, 1)");
        }
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return fail("delta must lie in (0, 0.5)");
        }
        if matches!(self.experiment, ExperimentKind::Sweep) && self.methods.is_empty() {
            return fail("a sweep needs at least one method");
        }
        if let ExperimentKind::BoundCurve { max_demos: 0 } = self.experiment {
            return fail("bound curve needs max_demos >= 1");
        }
        if self.methods.nevd.iter().chain(&self.methods.piob).any(|&e| !(e > 0.0)) {
            return fail("thresholds must be positive");
        }
        if self.methods.convergence.contains(&0) {
            return fail("patience must be at least 1");
        }
        if self.methods.validation.iter().any(|&i| i < 2) {
            return fail("validation interval must be at least 2");
        }
        if self.seeding.is_some_and(|s| s.count == 0) {
            return fail("seeding count must be at least 1");
        }
        if self.max_demos == Some(0) {
            return fail("max_demos must be at least 1");
        }
        self.mcmc.validate()?;
        Ok(())
    }
}
