use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::estimate::TransitionTensor;
use super::solver::{TabularMdp, ViOptions};
use super::{Action, MdpError, MdpModel};
use crate::affect::Emotion;

/// The shipped default decision model.
pub const DEFAULT_CONFIG_JSON: &str = include_str!("../../config/mdp_default.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RewardConfig {
    /// `R(s, a, s')` depends only on the successor state.
    BySuccessor { by_successor: BTreeMap<Emotion, f64> },
    Full(BTreeMap<Action, BTreeMap<Emotion, BTreeMap<Emotion, f64>>>),
}

/// On-disk MDP description. States and actions are always named.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpConfig {
    pub version: u32,
    pub states: Vec<Emotion>,
    /// Action set, in argmax tie-break order.
    pub tie_break: Vec<Action>,
    pub discounts: BTreeMap<Emotion, f64>,
    pub rewards: RewardConfig,
    pub transitions: TransitionTensor,
    #[serde(default)]
    pub value_iteration: ViOptions,
}

impl MdpConfig {
    pub fn default_config() -> Self {
        Self::from_json(DEFAULT_CONFIG_JSON).expect("shipped config is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, MdpError> {
        serde_json::from_str(text).map_err(|e| MdpError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MdpError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| MdpError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| MdpError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Replaces the transition tensor, e.g. with one estimated from a log.
    pub fn with_transitions(mut self, transitions: TransitionTensor) -> Self {
        self.transitions = transitions;
        self
    }

    pub fn to_model(&self) -> Result<MdpModel, MdpError> {
        let missing = |what: String| MdpError::Config(format!("missing {what}"));
        let n = self.states.len();
        let m = self.tie_break.len();
        let mut transitions = Vec::with_capacity(m * n * n);
        let mut rewards = Vec::with_capacity(m * n * n);
        for &a in &self.tie_break {
            let rows = self.transitions.get(&a).ok_or_else(|| missing(format!("transitions for {a}")))?;
            for &s in &self.states {
                let row = rows.get(&s).ok_or_else(|| missing(format!("transitions for ({a}, {s})")))?;
                for &next in &self.states {
                    transitions.push(row.get(&next).copied().unwrap_or(0.0));
                    let r = match &self.rewards {
                        RewardConfig::BySuccessor { by_successor } => by_successor
                            .get(&next)
                            .copied()
                            .ok_or_else(|| missing(format!("reward for successor {next}")))?,
                        RewardConfig::Full(full) => full
                            .get(&a)
                            .and_then(|r| r.get(&s))
                            .and_then(|r| r.get(&next))
                            .copied()
                            .ok_or_else(|| missing(format!("reward for ({a}, {s}, {next})")))?,
                    };
                    rewards.push(r);
                }
            }
        }
        let discounts = self
            .states
            .iter()
            .map(|s| self.discounts.get(s).copied().ok_or_else(|| missing(format!("discount for {s}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let tabular = TabularMdp::new(n, m, transitions, rewards, discounts)?;
        Ok(MdpModel {
            states: self.states.clone(),
            actions: self.tie_break.clone(),
            tabular,
        })
    }
}
