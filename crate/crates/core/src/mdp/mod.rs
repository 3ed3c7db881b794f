//! Decision core: transition estimation, Markov-chain analysis, value
//! iteration with per-state discounts, and policy lookup with fallback.

mod chain;
mod config;
mod estimate;
mod model;
mod solver;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use chain::{check_ergodicity, stationary_distribution, ErgodicityReport, StationaryOptions};
pub use config::{MdpConfig, RewardConfig, DEFAULT_CONFIG_JSON};
pub use estimate::{estimate_transitions, Transition, TransitionLog, TransitionTensor};
pub use model::{lookup_action, solve, MdpModel, Policy, Rank};
pub use solver::{value_iteration, TabularMdp, ViOptions, ViSolution};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MdpError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("non-finite value at iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error("negative smoothing {0}")]
    NegativeSmoothing(f64),
    #[error("chain is periodic (period {period}); no limiting distribution from a uniform start")]
    Periodic { period: usize },
    #[error("power iteration did not converge within {iterations} iterations (residual {residual:e}); chain may be reducible or periodic")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("every action is infeasible in state {0}")]
    AllInfeasible(String),
    #[error("config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    IncreasePace,
    DecreasePace,
    SimplifyContent,
    NoChange,
    EnrichContent,
}

/// Whether an action changes the lecture's pace or its content.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Pace,
    Content,
}

impl Action {
    /// Default tie-break order.
    pub const ALL: [Action; 5] = [
        Action::IncreasePace,
        Action::DecreasePace,
        Action::SimplifyContent,
        Action::NoChange,
        Action::EnrichContent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Action::IncreasePace => "increase_pace",
            Action::DecreasePace => "decrease_pace",
            Action::SimplifyContent => "simplify_content",
            Action::NoChange => "no_change",
            Action::EnrichContent => "enrich_content",
        }
    }

    pub fn parse(s: &str) -> Option<Action> {
        Action::ALL.into_iter().find(|a| a.as_str() == s)
    }

    pub fn kind(self) -> ActionKind {
        match self {
            Action::IncreasePace | Action::DecreasePace => ActionKind::Pace,
            _ => ActionKind::Content,
        }
    }

    /// Wording used in instructor-facing tables.
    pub fn describe(self) -> &'static str {
        match self {
            Action::IncreasePace => "Increasing pace",
            Action::DecreasePace => "Decreasing pace",
            Action::SimplifyContent => "Simplifying content",
            Action::NoChange => "Making no change",
            Action::EnrichContent => "Enriching content",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
