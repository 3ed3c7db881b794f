//! File-backed session storage: one directory per session under a root.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use classpulse_core::calibration::CalibrationState;
use classpulse_core::engine::{EngineConfig, EventEnvelope, RosterEntry, SessionMetrics, SessionStatus};
use classpulse_core::mdp::TransitionLog;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SESSION_FILE: &str = "session.json";
pub const CALIBRATION_FILE: &str = "calibration.json";
pub const EVENTS_FILE: &str = "events.ndjson";
pub const METRICS_FILE: &str = "metrics.json";
pub const TRANSITIONS_FILE: &str = "transitions.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("session `{0}` not found")]
    NotFound(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("{path}: truncated or corrupt record at byte offset {offset} (line {line}): {reason}")]
    TruncatedLog {
        path: PathBuf,
        offset: u64,
        line: usize,
        reason: String,
    },
}

/// Everything needed to describe a session apart from its logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub status: SessionStatus,
    pub roster: Vec<RosterEntry>,
    pub model_id: String,
    pub mdp_config_id: String,
    pub engine: EngineConfig,
    /// Wall-clock creation time, ms since the Unix epoch.
    pub created_unix_ms: i64,
    pub ended_unix_ms: Option<i64>,
}

/// A session read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredSession {
    pub record: SessionRecord,
    pub calibration: CalibrationState,
    pub events: Vec<EventEnvelope>,
    pub metrics: SessionMetrics,
    pub transitions: TransitionLog,
}

impl StoredSession {
    /// Metrics rebuilt from the event log alone.
    pub fn replayed_metrics(&self) -> SessionMetrics {
        SessionMetrics::replay(self.events.iter().map(|e| &e.event))
    }
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), StoreError> {
    let text = serde_json::to_string_pretty(value).expect("stored types serialize");
    // Write then rename so readers never see half a file.
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, text).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, StoreError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

impl Store {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dir(&self, session_id: &str) -> PathBuf {
        self.root.join(session_id)
    }

    pub fn exists(&self, session_id: &str) -> bool {
        self.dir(session_id).join(SESSION_FILE).is_file()
    }

    /// Creates the session directory and writes the record and an empty log.
    pub fn create(&self, record: &SessionRecord) -> Result<(), StoreError> {
        let dir = self.dir(&record.session_id);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let events = dir.join(EVENTS_FILE);
        File::create(&events).map_err(io_err(&events))?;
        self.write_record(record)
    }

    pub fn write_record(&self, record: &SessionRecord) -> Result<(), StoreError> {
        write_json(&self.dir(&record.session_id).join(SESSION_FILE), record)
    }

    /// Appends events to the session's log, one JSON object per line.
    pub fn append_events(&self, session_id: &str, events: &[EventEnvelope]) -> Result<(), StoreError> {
        if events.is_empty() {
            return Ok(());
        }
        let path = self.dir(session_id).join(EVENTS_FILE);
        let mut buf = String::new();
        for e in events {
            buf.push_str(&e.to_line());
            buf.push('\n');
        }
        let mut file = OpenOptions::new().append(true).open(&path).map_err(io_err(&path))?;
        file.write_all(buf.as_bytes()).map_err(io_err(&path))?;
        file.flush().map_err(io_err(&path))
    }

    /// Writes the derived artifacts of a session.
    pub fn write_state(
        &self,
        record: &SessionRecord,
        calibration: &CalibrationState,
        metrics: &SessionMetrics,
        transitions: &TransitionLog,
    ) -> Result<(), StoreError> {
        let dir = self.dir(&record.session_id);
        write_json(&dir.join(CALIBRATION_FILE), calibration)?;
        write_json(&dir.join(METRICS_FILE), metrics)?;
        write_json(&dir.join(TRANSITIONS_FILE), transitions)?;
        self.write_record(record)
    }

    pub fn load(&self, session_id: &str) -> Result<StoredSession, StoreError> {
        if !self.exists(session_id) {
            return Err(StoreError::NotFound(session_id.to_string()));
        }
        let dir = self.dir(session_id);
        Ok(StoredSession {
            record: read_json(&dir.join(SESSION_FILE))?,
            calibration: read_json(&dir.join(CALIBRATION_FILE))?,
            events: read_events(&dir.join(EVENTS_FILE))?,
            metrics: read_json(&dir.join(METRICS_FILE))?,
            transitions: read_json(&dir.join(TRANSITIONS_FILE))?,
        })
    }
}

/// Reads an event log. Every record must be a complete line; the first bad
/// one is reported with its byte offset.
pub fn read_events(path: &Path) -> Result<Vec<EventEnvelope>, StoreError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mut events = Vec::new();
    let mut offset = 0usize;
    let mut line_no = 0;
    while offset < bytes.len() {
        line_no += 1;
        let bad = |reason: String| StoreError::TruncatedLog {
            path: path.to_path_buf(),
            offset: offset as u64,
            line: line_no,
            reason,
        };
        let Some(len) = bytes[offset..].iter().position(|&b| b == b'\n') else {
            return Err(bad("missing newline".into()));
        };
        let line = &bytes[offset..offset + len];
        let event: EventEnvelope = serde_json::from_slice(line).map_err(|e| bad(e.to_string()))?;
        if event.seq != events.len() as u64 {
            return Err(bad(format!("expected seq {}, found {}", events.len(), event.seq)));
        }
        events.push(event);
        offset += len + 1;
    }
    Ok(events)
}
