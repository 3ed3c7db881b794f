use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{RosterEntry, Suggestion};
use crate::affect::Emotion;
use crate::mdp::{Action, ActionKind, Transition};

pub const EVENT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSource {
    /// The instructor carried out the action.
    Applied,
    /// The instructor chose a different action than suggested.
    Override,
    /// The action cannot be carried out right now.
    Infeasible,
}

/// One entry of the append-only session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SessionEvent {
    SessionStarted {
        ts_ms: i64,
        session_id: String,
        roster: Vec<RosterEntry>,
    },
    /// Summary of one ingest batch.
    Samples {
        ts_ms: i64,
        accepted: usize,
        rejected: usize,
    },
    WentLive {
        ts_ms: i64,
    },
    Tick {
        ts_ms: i64,
        labels: BTreeMap<String, Emotion>,
        collective: Option<Emotion>,
        confidence: Option<f64>,
        skipped: usize,
        latency_ms: f64,
    },
    Suggestion(Suggestion),
    Action {
        ts_ms: i64,
        action: Action,
        source: ActionSource,
    },
    Intervention {
        ts_ms: i64,
        kind: ActionKind,
    },
    Transition(Transition),
    Ended {
        ts_ms: i64,
    },
}

impl SessionEvent {
    pub fn ts_ms(&self) -> i64 {
        match self {
            SessionEvent::SessionStarted { ts_ms, .. }
            | SessionEvent::Samples { ts_ms, .. }
            | SessionEvent::WentLive { ts_ms }
            | SessionEvent::Tick { ts_ms, .. }
            | SessionEvent::Action { ts_ms, .. }
            | SessionEvent::Intervention { ts_ms, .. }
            | SessionEvent::Ended { ts_ms } => *ts_ms,
            SessionEvent::Suggestion(s) => s.ts_ms,
            SessionEvent::Transition(t) => t.ts_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventEnvelope {
    pub v: u32,
    pub seq: u64,
    #[serde(flatten)]
    pub event: SessionEvent,
}

impl EventEnvelope {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("events serialize")
    }
}
