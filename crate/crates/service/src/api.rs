//! Request and response bodies of the `/v1` API.

use serde::{Deserialize, Serialize};
use suffice_core::env::{DrivingConfig, GridworldConfig, Layout};
use suffice_core::sufficiency::{Assessment, Condition};

use crate::error::{ApiError, ApiResult};

pub const DEFAULT_EPSILON: f64 = 0.3;
pub const DEFAULT_PATIENCE: usize = 3;
pub const DEFAULT_INTERVAL: usize = 5;
pub const DEFAULT_ALPHA: f64 = 0.95;
pub const DEFAULT_DELTA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvironmentRequest {
    Gridworld(GridworldConfig),
    Driving(DrivingConfig),
}

impl Default for EnvironmentRequest {
    fn default() -> Self {
        EnvironmentRequest::Gridworld(GridworldConfig::default())
    }
}

/// Stopping condition; omitted hyperparameters take the service defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConditionRequest {
    Nevd { epsilon: Option<f64> },
    Convergence { patience: Option<usize> },
    Validation { interval: Option<usize> },
}

impl Default for ConditionRequest {
    fn default() -> Self {
        ConditionRequest::Nevd { epsilon: None }
    }
}

impl ConditionRequest {
    pub fn resolve(self) -> ApiResult<Condition> {
        let condition = match self {
            ConditionRequest::Nevd { epsilon } => Condition::Nevd {
                epsilon: epsilon.unwrap_or(DEFAULT_EPSILON),
            },
            ConditionRequest::Convergence { patience } => Condition::Convergence {
                patience: patience.unwrap_or(DEFAULT_PATIENCE),
            },
            ConditionRequest::Validation { interval } => Condition::Validation {
                interval: interval.unwrap_or(DEFAULT_INTERVAL),
            },
        };
        match condition {
            Condition::Nevd { epsilon } if !(epsilon > 0.0 && epsilon.is_finite()) => {
                Err(ApiError::validation("condition.epsilon", "epsilon must be positive"))
            }
            Condition::Convergence { patience: 0 } => {
                Err(ApiError::validation("condition.patience", "patience must be at least 1"))
            }
            Condition::Validation { interval } if interval < 2 => {
                Err(ApiError::validation("condition.interval", "interval must be at least 2"))
            }
            c => Ok(c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CreateSession {
    pub environment: EnvironmentRequest,
    pub condition: ConditionRequest,
    pub alpha: f64,
    pub delta: f64,
    /// MCMC seed; round `r` samples with a seed derived from it.
    pub seed: u64,
    /// Defaults to the number of states.
    pub max_demos: Option<usize>,
    /// Custom reward weights, normalized to unit length.
    pub weights: Option<Vec<f64>>,
}

impl Default for CreateSession {
    fn default() -> Self {
        Self {
            environment: EnvironmentRequest::default(),
            condition: ConditionRequest::default(),
            alpha: DEFAULT_ALPHA,
            delta: DEFAULT_DELTA,
            seed: 0,
            max_demos: None,
            weights: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Collecting,
    Sufficient,
    Capped,
}

/// What a client needs to draw the environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentPayload {
    pub kind: String,
    pub num_states: usize,
    pub num_actions: usize,
    pub action_names: Vec<String>,
    pub feature_names: Vec<String>,
    /// Unit-norm reward weights, one per feature.
    pub weights: Vec<f64>,
    pub layout: Layout,
    pub terminal_states: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionDescriptor {
    pub id: String,
    pub status: SessionStatus,
    pub condition: Condition,
    pub alpha: f64,
    pub delta: f64,
    pub max_demos: usize,
    pub environment: EnvironmentPayload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Progress {
    pub in_flight: bool,
    /// MCMC iterations completed in the running round.
    pub iteration: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub id: String,
    pub status: SessionStatus,
    pub demos: usize,
    pub rating: Option<u8>,
    pub progress: Progress,
    pub latest: Option<Assessment>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoRequest {
    pub state: usize,
    pub action: usize,
    /// Idempotency token: a repeated token returns the stored assessment.
    #[serde(default)]
    pub token: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoResponse {
    pub assessment: Assessment,
    pub status: SessionStatus,
    /// True when the token matched an earlier submission.
    pub replayed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyPayload {
    pub round: usize,
    /// Greedy MAP action per state.
    pub actions: Vec<usize>,
    pub action_names: Vec<String>,
    /// State values of the MAP policy under the MAP reward.
    pub values: Vec<f64>,
    pub map_weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatingRequest {
    pub rating: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingResponse {
    pub id: String,
    pub rating: u8,
}
