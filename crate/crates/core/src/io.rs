//! JSON documents for MDPs and demonstrations.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Demonstration, MdpParts, RewardWeights, TabularMdp};
use crate::scalar::Scalar;

pub const FORMAT_VERSION: u32 = 1;

/// On-disk form of a [`TabularMdp`], optionally with reward weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MdpDocument<T> {
    pub format_version: u32,
    pub num_states: usize,
    pub num_actions: usize,
    pub discount: T,
    pub initial_dist: Vec<T>,
    pub terminal_states: Vec<usize>,
    /// `[state, action, next_state, probability]`.
    pub transitions: Vec<(usize, usize, usize, T)>,
    /// One row per state.
    pub features: Vec<Vec<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<T>>,
}

impl<T: Scalar> MdpDocument<T> {
    pub fn from_mdp(mdp: &TabularMdp<T>, weights: Option<&RewardWeights<T>>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            num_states: mdp.num_states(),
            num_actions: mdp.num_actions(),
            discount: mdp.discount(),
            initial_dist: mdp.initial_dist().to_vec(),
            terminal_states: mdp.terminal_states().to_vec(),
            transitions: mdp.transition_triples().collect(),
            features: (0..mdp.num_states()).map(|s| mdp.features(s).to_vec()).collect(),
            weights: weights.map(|w| w.as_slice().to_vec()),
        }
    }

    pub fn into_mdp(self) -> Result<(TabularMdp<T>, Option<RewardWeights<T>>)> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported MDP document version {}",
                self.format_version
            )));
        }
        let weights = self.weights.map(RewardWeights::new).transpose()?;
        let mdp = TabularMdp::new(MdpParts {
            num_states: self.num_states,
            num_actions: self.num_actions,
            transitions: self.transitions,
            features: self.features,
            discount: self.discount,
            initial_dist: self.initial_dist,
            terminal_states: self.terminal_states,
        })?;
        Ok((mdp, weights))
    }
}

pub fn save_mdp<T: Scalar>(
    path: impl AsRef<Path>,
    mdp: &TabularMdp<T>,
    weights: Option<&RewardWeights<T>>,
) -> Result<()> {
    let doc = MdpDocument::from_mdp(mdp, weights);
    fs::write(path, serde_json::to_string_pretty(&doc)?)?;
    Ok(())
}

pub fn load_mdp<T: Scalar>(path: impl AsRef<Path>) -> Result<(TabularMdp<T>, Option<RewardWeights<T>>)> {
    let doc: MdpDocument<T> = serde_json::from_str(&fs::read_to_string(path)?)?;
    doc.into_mdp()
}

pub fn save_demos(path: impl AsRef<Path>, demos: &Demonstration) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(demos)?)?;
    Ok(())
}

pub fn load_demos(path: impl AsRef<Path>) -> Result<Demonstration> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
