//! Per-session control loop: ingest, recognize, aggregate, decide.

mod collective;
mod events;
mod metrics;
mod preferences;
mod session;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use collective::{aggregate, CollectiveState, StudentPoint};
pub use events::{ActionSource, EventEnvelope, SessionEvent, EVENT_SCHEMA_VERSION};
pub use metrics::{rate_per_minute, SessionMetrics};
pub use preferences::{
    apply_preferences, AggregatedPreferences, ContentStyle, PacePreference, StudentPreferences,
};
pub use session::{
    EngineConfig, IngestReport, RejectedLine, RosterEntry, Session, SessionSnapshot, Suggestion,
};

use crate::affect::AffectError;
use crate::calibration::CalibrationError;
use crate::features::FeatureError;
use crate::ingest::IngestError;
use crate::mdp::MdpError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Calibrating,
    Live,
    Ended,
}

impl fmt::Display for SessionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SessionStatus::Calibrating => "calibrating",
            SessionStatus::Live => "live",
            SessionStatus::Ended => "ended",
        })
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("no reporting students")]
    NoReportingStudents,
    #[error("student {student_id}: weight {weight} must be positive and finite")]
    InvalidWeight { student_id: String, weight: f64 },
    #[error("student {0} is not on the roster")]
    UnknownStudent(String),
    #[error("roster is empty")]
    EmptyRoster,
    #[error("student {0} appears twice on the roster")]
    DuplicateStudent(String),
    #[error("session has ended")]
    SessionEnded,
    #[error("illegal status transition {from} -> {to}")]
    IllegalTransition { from: SessionStatus, to: SessionStatus },
    #[error("calibration incomplete for {} student(s)", shortfall.len())]
    CalibrationShortfall { shortfall: BTreeMap<String, u64> },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Affect(#[from] AffectError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}
