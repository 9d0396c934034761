use std::collections::HashMap;

use suffice_core::env::{generate_driving, generate_gridworld};
use suffice_core::mdp::{PolicyEvaluator, RewardWeights, StateAction};
use suffice_core::risk::RiskConfig;
use suffice_core::sufficiency::{write_trace_csv, write_trace_json, Assessment, SufficiencyConfig, Teacher};
use suffice_core::Environment;

use crate::api::{
    CreateSession, DemoResponse, EnvironmentPayload, EnvironmentRequest, PolicyPayload, SessionDescriptor,
    SessionStatus,
};
use crate::error::{ApiError, ApiResult};

/// One teaching session: the environment, the sufficiency loop and the
/// interaction record.
#[derive(Debug)]
pub struct Session {
    id: String,
    request: CreateSession,
    env: Environment,
    teacher: Teacher<f64>,
    rating: Option<u8>,
    tokens: HashMap<String, (StateAction, usize)>,
}

fn build_environment(request: &CreateSession) -> ApiResult<Environment> {
    let built = match &request.environment {
        EnvironmentRequest::Gridworld(cfg) => generate_gridworld(cfg),
        EnvironmentRequest::Driving(cfg) => generate_driving(cfg),
    };
    let mut env = built.map_err(|e| ApiError::validation("environment", e.to_string()))?;
    if let Some(raw) = &request.weights {
        if raw.len() != env.mdp.num_features() {
            return Err(ApiError::validation(
                "weights",
                format!("expected {} weights, got {}", env.mdp.num_features(), raw.len()),
            ));
        }
        env.true_weights = RewardWeights::new(raw.clone()).map_err(|e| ApiError::validation("weights", e.to_string()))?;
    }
    Ok(env)
}

fn sufficiency_config(request: &CreateSession) -> ApiResult<SufficiencyConfig> {
    let mut cfg = SufficiencyConfig::new(request.condition.resolve()?);
    if !(request.alpha > 0.0 && request.alpha < 1.0) {
        return Err(ApiError::validation("alpha", "alpha must lie in (0, 1)"));
    }
    if !(request.delta > 0.0 && request.delta < 0.5) {
        return Err(ApiError::validation("delta", "delta must lie in (0, 0.5)"));
    }
    if request.max_demos == Some(0) {
        return Err(ApiError::validation("max_demos", "max_demos must be at least 1"));
    }
    cfg.risk = RiskConfig {
        alpha: request.alpha,
        delta: request.delta,
        ..RiskConfig::default()
    };
    cfg.mcmc.seed = request.seed;
    cfg.max_demos = request.max_demos;
    Ok(cfg)
}

impl Session {
    pub fn create(id: String, request: CreateSession) -> ApiResult<Self> {
        let env = build_environment(&request)?;
        let cfg = sufficiency_config(&request)?;
        let teacher = Teacher::new(env.mdp.clone(), cfg, None)?;
        Ok(Self {
            id,
            request,
            env,
            teacher,
            rating: None,
            tokens: HashMap::new(),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn request(&self) -> &CreateSession {
        &self.request
    }

    pub fn teacher(&self) -> &Teacher<f64> {
        &self.teacher
    }

    pub fn rating(&self) -> Option<u8> {
        self.rating
    }

    pub fn status(&self) -> SessionStatus {
        if self.teacher.is_sufficient() {
            SessionStatus::Sufficient
        } else if self.teacher.at_cap() {
            SessionStatus::Capped
        } else {
            SessionStatus::Collecting
        }
    }

    pub fn assessments(&self) -> &[Assessment] {
        self.teacher.assessments()
    }

    pub fn descriptor(&self) -> SessionDescriptor {
        let mdp = &self.env.mdp;
        let cfg = self.teacher.config();
        SessionDescriptor {
            id: self.id.clone(),
            status: self.status(),
            condition: cfg.condition,
            alpha: cfg.risk.alpha,
            delta: cfg.risk.delta,
            max_demos: cfg.demo_cap(mdp),
            environment: EnvironmentPayload {
                kind: match self.request.environment {
                    EnvironmentRequest::Gridworld(_) => "gridworld".into(),
                    EnvironmentRequest::Driving(_) => "driving".into(),
                },
                num_states: mdp.num_states(),
                num_actions: mdp.num_actions(),
                action_names: self.env.action_names.clone(),
                feature_names: self.env.feature_names.clone(),
                weights: self.env.true_weights.as_slice().to_vec(),
                layout: self.env.layout.clone(),
                terminal_states: mdp.terminal_states().to_vec(),
            },
        }
    }

    /// Answer stored under `token`, if any. A token reused with a different
    /// pair is a conflict.
    fn replay(&self, token: &str, pair: StateAction) -> ApiResult<Option<DemoResponse>> {
        match self.tokens.get(token) {
            Some(&(stored, _)) if stored != pair => Err(ApiError::Conflict(format!(
                "token {token} was already used for a different demonstration"
            ))),
            Some(&(_, index)) => Ok(Some(DemoResponse {
                assessment: self.teacher.assessments()[index].clone(),
                status: self.status(),
                replayed: true,
            })),
            None => Ok(None),
        }
    }

    /// Runs one round on `(state, action)`.
    pub fn submit(
        &mut self,
        state: usize,
        action: usize,
        token: Option<&str>,
        progress: &dyn Fn(usize, usize),
    ) -> ApiResult<DemoResponse> {
        let pair = StateAction::new(state, action);
        if let Some(token) = token {
            if let Some(stored) = self.replay(token, pair)? {
                return Ok(stored);
            }
        }
        match self.status() {
            SessionStatus::Collecting => {}
            SessionStatus::Sufficient => return Err(ApiError::Conflict("session is already sufficient".into())),
            SessionStatus::Capped => return Err(ApiError::Conflict("session reached its demonstration cap".into())),
        }
        let mdp = &self.env.mdp;
        if state >= mdp.num_states() {
            return Err(ApiError::validation("state", format!("state must be below {}", mdp.num_states())));
        }
        if action >= mdp.num_actions() {
            return Err(ApiError::validation("action", format!("action must be below {}", mdp.num_actions())));
        }
        let report = self.teacher.observe_with_progress(pair, progress)?;
        if let Some(token) = token {
            self.tokens.insert(token.to_string(), (pair, self.teacher.assessments().len() - 1));
        }
        Ok(DemoResponse {
            assessment: report.assessment,
            status: self.status(),
            replayed: false,
        })
    }

    pub fn policy(&self) -> ApiResult<PolicyPayload> {
        let batch = self
            .teacher
            .batch()
            .ok_or_else(|| ApiError::Precondition("no demonstration has been processed yet".into()))?;
        let mdp = &self.env.mdp;
        let rewards = mdp.rewards(&batch.map_weights)?;
        let values = PolicyEvaluator::new(mdp, &batch.map_policy)?.evaluate(&rewards);
        Ok(PolicyPayload {
            round: self.teacher.assessments().len(),
            actions: batch.map_policy.greedy_actions(),
            action_names: self.env.action_names.clone(),
            values,
            map_weights: batch.map_weights.as_slice().to_vec(),
        })
    }

    pub fn rate(&mut self, rating: i64) -> ApiResult<u8> {
        if !(1..=5).contains(&rating) {
            return Err(ApiError::validation("rating", "rating must be an integer from 1 to 5"));
        }
        if self.status() == SessionStatus::Collecting {
            return Err(ApiError::Conflict("the session is still collecting demonstrations".into()));
        }
        if self.rating.is_some() {
            return Err(ApiError::Conflict("the session has already been rated".into()));
        }
        self.rating = Some(rating as u8);
        Ok(rating as u8)
    }

    /// Round-by-round trace as CSV or JSON.
    pub fn trace(&self, json: bool) -> ApiResult<Vec<u8>> {
        let mut out = Vec::new();
        if json {
            write_trace_json(&mut out, self.assessments())?;
        } else {
            write_trace_csv(&mut out, self.assessments())?;
        }
        Ok(out)
    }
}
