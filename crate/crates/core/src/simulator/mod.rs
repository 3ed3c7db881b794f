//! Synthetic students, labeled datasets with known ground truth, and
//! closed-loop classroom sessions.

mod dataset;
mod population;
mod scenario;
mod student;

use thiserror::Error;

pub use dataset::{evaluate, generate_dataset, read_truth, user_id, write_truth, EvalReport, GenerationConfig, GeneratedDataset, TruthRow};
pub use population::{FeatureModel, PopulationPreset, UserProfile, DEFAULT_POPULATION_JSON};
pub use scenario::{run_closed_loop, train_scenario_regressor, ClosedLoopOutcome, ScenarioConfig, SimulationReport};
pub use student::{step_student, DynamicsPreset, SyntheticStudent, DECAY_TO_BORED_JSON};

use crate::affect::AffectError;
use crate::engine::EngineError;
use crate::mdp::{Action, MdpError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid preset: {0}")]
    Preset(String),
    #[error("degenerate population: zero noise and zero gain")]
    Degenerate,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("no latent dynamics for action {0}")]
    UnknownAction(Action),
    #[error(transparent)]
    Affect(#[from] AffectError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}
