use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::collective::{aggregate, CollectiveState};
use super::events::{ActionSource, EventEnvelope, SessionEvent, EVENT_SCHEMA_VERSION};
use super::metrics::SessionMetrics;
use super::preferences::{apply_preferences, AggregatedPreferences, StudentPreferences};
use super::{EngineError, SessionStatus};
use crate::affect::{predict_va, Emotion, FuzzyConfig, VaPoint, VaRegressor};
use crate::calibration::{CalibrationConfig, CalibrationState};
use crate::features::{extract_features, DEFAULT_WINDOW};
use crate::ingest::{parse_sample, IngestError, SensorSample, StreamSet, DEFAULT_RING_CAPACITY};
use crate::mdp::{lookup_action, Action, ActionKind, Policy, Rank, Transition, TransitionLog};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub tick_period_ms: i64,
    /// Consecutive ticks a collective label must hold before a suggestion.
    pub stability_ticks: u32,
    pub feature_window: usize,
    pub ring_capacity: usize,
    pub calibration: CalibrationConfig,
    /// Stream time between calibration feature vectors of one student.
    pub calibration_period_ms: i64,
    pub fuzzy: FuzzyConfig,
    /// Q bias for preferred actions; `None` means `0.05 * max |Q|`.
    pub preference_delta: Option<f64>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            tick_period_ms: 10_000,
            stability_ticks: 3,
            feature_window: DEFAULT_WINDOW,
            ring_capacity: DEFAULT_RING_CAPACITY,
            calibration: CalibrationConfig::default(),
            calibration_period_ms: 1_000,
            fuzzy: FuzzyConfig::default(),
            preference_delta: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RosterEntry {
    pub student_id: String,
    #[serde(default)]
    pub preferences: StudentPreferences,
    #[serde(default = "default_weight")]
    pub weight: f64,
}

fn default_weight() -> f64 {
    1.0
}

impl RosterEntry {
    pub fn new(student_id: impl Into<String>) -> Self {
        Self {
            student_id: student_id.into(),
            preferences: StudentPreferences::default(),
            weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub action: Action,
    pub rank: Rank,
    pub collective_label: Emotion,
    pub confidence: f64,
    pub ts_ms: i64,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedLine {
    /// 1-based line number in the submitted batch.
    pub line: usize,
    pub field: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejected_count: usize,
    pub rejected: Vec<RejectedLine>,
}

/// Read-only view of a session for status endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub session_id: String,
    pub status: SessionStatus,
    pub clock_ms: Option<i64>,
    pub collective: Option<CollectiveState>,
    pub suggestion: Option<Suggestion>,
    pub infeasible: BTreeSet<Action>,
    pub metrics: SessionMetrics,
}

/// One classroom session. Every mutation is recorded as an event and the
/// metrics are folded from those events.
#[derive(Debug)]
pub struct Session {
    id: String,
    config: EngineConfig,
    roster: Vec<RosterEntry>,
    status: SessionStatus,
    streams: StreamSet,
    calibration: CalibrationState,
    next_calibration_ms: BTreeMap<String, i64>,
    regressor: Arc<VaRegressor>,
    policy: Policy,
    infeasible: BTreeSet<Action>,
    clock_ms: Option<i64>,
    next_tick_ms: Option<i64>,
    stable_label: Option<Emotion>,
    stable_count: u32,
    last_emitted: Option<Suggestion>,
    prev_collective: Option<Emotion>,
    pending_action: Option<Action>,
    latest_state: Option<CollectiveState>,
    /// Collective states of ticks not yet taken by [`Session::take_new_states`].
    new_states: Vec<(i64, CollectiveState)>,
    transitions: TransitionLog,
    metrics: SessionMetrics,
    events: Vec<EventEnvelope>,
    cursor: usize,
}

impl Session {
    /// Starts a session in the calibrating state. `policy` is biased by the
    /// roster's majority preferences before use.
    pub fn new(
        id: impl Into<String>,
        config: EngineConfig,
        roster: Vec<RosterEntry>,
        regressor: Arc<VaRegressor>,
        policy: &Policy,
        now_ms: i64,
    ) -> Result<Self, EngineError> {
        if roster.is_empty() {
            return Err(EngineError::EmptyRoster);
        }
        let mut seen = BTreeSet::new();
        for entry in &roster {
            if !seen.insert(entry.student_id.as_str()) {
                return Err(EngineError::DuplicateStudent(entry.student_id.clone()));
            }
            if !(entry.weight > 0.0 && entry.weight.is_finite()) {
                return Err(EngineError::InvalidWeight {
                    student_id: entry.student_id.clone(),
                    weight: entry.weight,
                });
            }
        }
        let prefs = AggregatedPreferences::from_students(roster.iter().map(|r| &r.preferences));
        let policy = apply_preferences(policy, &prefs, config.preference_delta);
        let id = id.into();
        let mut session = Self {
            streams: StreamSet::new(config.ring_capacity),
            calibration: CalibrationState::new(config.calibration),
            next_calibration_ms: BTreeMap::new(),
            id: id.clone(),
            roster: roster.clone(),
            status: SessionStatus::Calibrating,
            config,
            regressor,
            policy,
            infeasible: BTreeSet::new(),
            clock_ms: None,
            next_tick_ms: None,
            stable_label: None,
            stable_count: 0,
            last_emitted: None,
            prev_collective: None,
            pending_action: None,
            latest_state: None,
            new_states: Vec::new(),
            transitions: TransitionLog::default(),
            metrics: SessionMetrics::default(),
            events: Vec::new(),
            cursor: 0,
        };
        session.log(SessionEvent::SessionStarted {
            ts_ms: now_ms,
            session_id: id,
            roster,
        });
        Ok(session)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn roster(&self) -> &[RosterEntry] {
        &self.roster
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    /// Latest sample timestamp seen, the session's notion of "now".
    pub fn clock_ms(&self) -> Option<i64> {
        self.clock_ms
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn calibration(&self) -> &CalibrationState {
        &self.calibration
    }

    pub fn streams(&self) -> &StreamSet {
        &self.streams
    }

    pub fn metrics(&self) -> &SessionMetrics {
        &self.metrics
    }

    pub fn transitions(&self) -> &TransitionLog {
        &self.transitions
    }

    pub fn events(&self) -> &[EventEnvelope] {
        &self.events
    }

    pub fn infeasible(&self) -> &BTreeSet<Action> {
        &self.infeasible
    }

    pub fn latest_state(&self) -> Option<&CollectiveState> {
        self.latest_state.as_ref()
    }

    pub fn latest_suggestion(&self) -> Option<&Suggestion> {
        self.last_emitted.as_ref()
    }

    /// Action the engine currently assumes is in effect.
    pub fn pending_action(&self) -> Option<Action> {
        self.pending_action
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            session_id: self.id.clone(),
            status: self.status,
            clock_ms: self.clock_ms,
            collective: self.latest_state.clone(),
            suggestion: self.last_emitted.clone(),
            infeasible: self.infeasible.clone(),
            metrics: self.metrics.clone(),
        }
    }

    /// Events appended since the previous call.
    pub fn take_new_events(&mut self) -> Vec<EventEnvelope> {
        let new = self.events[self.cursor..].to_vec();
        self.cursor = self.events.len();
        new
    }

    /// Collective state of every tick since the previous call, with the tick
    /// timestamp. Ticks where no student reported are absent.
    pub fn take_new_states(&mut self) -> Vec<(i64, CollectiveState)> {
        std::mem::take(&mut self.new_states)
    }

    fn log(&mut self, event: SessionEvent) {
        self.metrics.apply(&event);
        self.events.push(EventEnvelope {
            v: EVENT_SCHEMA_VERSION,
            seq: self.events.len() as u64,
            event,
        });
    }

    fn ensure_open(&self) -> Result<(), EngineError> {
        if self.status == SessionStatus::Ended {
            Err(EngineError::SessionEnded)
        } else {
            Ok(())
        }
    }

    fn on_roster(&self, student_id: &str) -> bool {
        self.roster.iter().any(|r| r.student_id == student_id)
    }

    /// Ingests one sample. While live, every tick due at or before the
    /// sample timestamp runs first.
    pub fn ingest_sample(&mut self, sample: &SensorSample) -> Result<(), EngineError> {
        self.ensure_open()?;
        sample.validate()?;
        if !self.on_roster(&sample.student_id) {
            return Err(EngineError::UnknownStudent(sample.student_id.clone()));
        }
        if let Some(last) = self
            .streams
            .get(&sample.student_id)
            .and_then(|s| s.last_ts(sample.channel))
        {
            if sample.ts_ms < last {
                return Err(IngestError::Ordering {
                    student_id: sample.student_id.clone(),
                    channel: sample.channel,
                    ts_ms: sample.ts_ms,
                    last_ts_ms: last,
                }
                .into());
            }
        }
        self.run_due_ticks(sample.ts_ms);
        self.streams.ingest_sample(sample)?;
        self.clock_ms = Some(self.clock_ms.map_or(sample.ts_ms, |c| c.max(sample.ts_ms)));
        if self.status == SessionStatus::Calibrating {
            self.sample_calibration(&sample.student_id, sample.ts_ms);
        }
        Ok(())
    }

    fn sample_calibration(&mut self, student_id: &str, ts_ms: i64) {
        if self
            .next_calibration_ms
            .get(student_id)
            .is_some_and(|&next| ts_ms < next)
        {
            return;
        }
        let Some(stream) = self.streams.get(student_id) else {
            return;
        };
        if let Ok(fv) = extract_features(stream, self.config.feature_window) {
            self.calibration.update_extrema(student_id, &fv);
            self.next_calibration_ms
                .insert(student_id.to_string(), ts_ms + self.config.calibration_period_ms);
        }
    }

    /// Ingests a batch, accepting valid samples and reporting the rest.
    pub fn ingest_batch(
        &mut self,
        samples: impl IntoIterator<Item = Result<SensorSample, IngestError>>,
    ) -> Result<IngestReport, EngineError> {
        self.ensure_open()?;
        let mut report = IngestReport::default();
        for (i, sample) in samples.into_iter().enumerate() {
            let outcome = sample.map_err(EngineError::from).and_then(|s| self.ingest_sample(&s));
            match outcome {
                Ok(()) => report.accepted += 1,
                Err(e) => {
                    let field = match &e {
                        EngineError::Ingest(ie) => ie.field().map(str::to_string),
                        EngineError::UnknownStudent(_) => Some("student_id".to_string()),
                        _ => None,
                    };
                    report.rejected.push(RejectedLine {
                        line: i + 1,
                        field,
                        reason: e.to_string(),
                    });
                }
            }
        }
        report.rejected_count = report.rejected.len();
        let ts_ms = self.clock_ms.unwrap_or(0);
        self.log(SessionEvent::Samples {
            ts_ms,
            accepted: report.accepted,
            rejected: report.rejected_count,
        });
        Ok(report)
    }

    /// Parses and ingests an NDJSON body. Blank lines are skipped but still
    /// counted for line numbers.
    pub fn ingest_ndjson(&mut self, body: &str) -> Result<IngestReport, EngineError> {
        let lines: Vec<(usize, &str)> = body
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .collect();
        let mut report = self.ingest_batch(lines.iter().map(|(_, l)| parse_sample(l)))?;
        for r in &mut report.rejected {
            r.line = lines[r.line - 1].0 + 1;
        }
        Ok(report)
    }

    /// Per-student number of calibration vectors still missing.
    pub fn calibration_shortfall(&self) -> BTreeMap<String, u64> {
        let needed = self.config.calibration.min_samples;
        self.roster
            .iter()
            .filter_map(|r| {
                let have = self.calibration.count(&r.student_id);
                (have < needed).then(|| (r.student_id.clone(), needed - have))
            })
            .collect()
    }

    /// Freezes calibration and starts the decision loop. Ticks fall on
    /// multiples of the tick period after `now_ms`.
    pub fn go_live(&mut self, now_ms: i64) -> Result<(), EngineError> {
        if self.status != SessionStatus::Calibrating {
            return Err(EngineError::IllegalTransition {
                from: self.status,
                to: SessionStatus::Live,
            });
        }
        let shortfall = self.calibration_shortfall();
        if !shortfall.is_empty() {
            return Err(EngineError::CalibrationShortfall { shortfall });
        }
        self.calibration.freeze_all();
        self.status = SessionStatus::Live;
        let period = self.config.tick_period_ms;
        self.next_tick_ms = Some((now_ms.div_euclid(period) + 1) * period);
        self.log(SessionEvent::WentLive { ts_ms: now_ms });
        Ok(())
    }

    /// Runs every tick due at or before `now_ms`.
    pub fn advance_to(&mut self, now_ms: i64) -> Result<(), EngineError> {
        self.ensure_open()?;
        self.run_due_ticks(now_ms);
        Ok(())
    }

    fn run_due_ticks(&mut self, now_ms: i64) {
        if self.status != SessionStatus::Live {
            return;
        }
        while let Some(next) = self.next_tick_ms.filter(|&t| t <= now_ms) {
            self.tick(next);
            self.next_tick_ms = Some(next + self.config.tick_period_ms);
        }
    }

    fn student_point(&self, student_id: &str) -> Result<VaPoint, EngineError> {
        let stream = self
            .streams
            .get(student_id)
            .ok_or_else(|| EngineError::UnknownStudent(student_id.to_string()))?;
        let fv = extract_features(stream, self.config.feature_window)?;
        let calibrated = self.calibration.normalize(student_id, &fv)?;
        Ok(predict_va(&self.regressor, &calibrated.values)?)
    }

    /// One pass of the decision loop at `ts_ms`.
    fn tick(&mut self, ts_ms: i64) -> Option<Suggestion> {
        let start = Instant::now();
        let mut points = Vec::with_capacity(self.roster.len());
        let mut skipped = 0;
        for entry in &self.roster {
            match self.student_point(&entry.student_id) {
                Ok(p) => points.push((entry.student_id.clone(), p, entry.weight)),
                Err(_) => skipped += 1,
            }
        }
        let state = aggregate(&points, &self.config.fuzzy).ok();
        let collective = state.as_ref().map(|s| s.collective.label);
        let decision = collective.and_then(|label| lookup_action(&self.policy, label, &self.infeasible).ok());
        let latency_ms = start.elapsed().as_secs_f64() * 1000.0;

        if let (Some(from), Some(action), Some(to)) = (self.prev_collective, self.pending_action, collective) {
            self.transitions.push(ts_ms, from, action, to);
            self.log(SessionEvent::Transition(Transition {
                ts_ms,
                from,
                action,
                to,
            }));
            self.pending_action = None;
        }
        if collective.is_some() {
            self.prev_collective = collective;
        }
        match collective {
            Some(label) if self.stable_label == Some(label) => self.stable_count += 1,
            Some(label) => {
                self.stable_label = Some(label);
                self.stable_count = 1;
            }
            None => {
                self.stable_label = None;
                self.stable_count = 0;
            }
        }

        let labels = state
            .as_ref()
            .map(|s| s.students.iter().map(|p| (p.student_id.clone(), p.label)).collect())
            .unwrap_or_default();
        self.log(SessionEvent::Tick {
            ts_ms,
            labels,
            collective,
            confidence: state.as_ref().map(|s| s.collective.confidence),
            skipped,
            latency_ms,
        });
        let reporting = state.as_ref().map_or(0, |s| s.students.len());
        let confidence = state.as_ref().map_or(0.0, |s| s.collective.confidence);
        if let Some(state) = state {
            self.new_states.push((ts_ms, state.clone()));
            self.latest_state = Some(state);
        }

        let (action, rank) = decision?;
        let k = self.config.stability_ticks.max(1);
        let changed = self.last_emitted.as_ref().map(|s| s.action) != Some(action);
        if self.stable_count < k || (self.stable_count > k && !changed) {
            return None;
        }
        let label = collective?;
        let suggestion = Suggestion {
            action,
            rank,
            collective_label: label,
            confidence,
            ts_ms,
            rationale: format!(
                "class is {label} ({:.0}% membership, {reporting} students) for {} ticks; {} ({})",
                confidence * 100.0,
                self.stable_count,
                action.describe(),
                rank_name(rank),
            ),
        };
        self.log(SessionEvent::Suggestion(suggestion.clone()));
        self.pending_action = Some(action);
        self.last_emitted = Some(suggestion.clone());
        Some(suggestion)
    }

    /// Teacher feedback on the current suggestion or a free choice.
    pub fn apply_action(&mut self, action: Action, source: ActionSource, now_ms: i64) -> Result<(), EngineError> {
        self.ensure_open()?;
        match source {
            ActionSource::Applied | ActionSource::Override => {
                self.infeasible.remove(&action);
                self.pending_action = Some(action);
            }
            ActionSource::Infeasible => {
                self.infeasible.insert(action);
                if self.pending_action == Some(action) {
                    self.pending_action = None;
                }
            }
        }
        self.log(SessionEvent::Action {
            ts_ms: now_ms,
            action,
            source,
        });
        Ok(())
    }

    /// Counts a manual adjustment made by a student.
    pub fn record_intervention(&mut self, kind: ActionKind, now_ms: i64) -> Result<&SessionMetrics, EngineError> {
        self.ensure_open()?;
        self.log(SessionEvent::Intervention { ts_ms: now_ms, kind });
        Ok(&self.metrics)
    }

    /// Runs outstanding ticks and closes the session.
    pub fn end(&mut self, now_ms: i64) -> Result<(), EngineError> {
        if self.status == SessionStatus::Ended {
            return Err(EngineError::IllegalTransition {
                from: SessionStatus::Ended,
                to: SessionStatus::Ended,
            });
        }
        self.run_due_ticks(now_ms);
        self.status = SessionStatus::Ended;
        self.log(SessionEvent::Ended { ts_ms: now_ms });
        Ok(())
    }
}

fn rank_name(rank: Rank) -> &'static str {
    match rank {
        Rank::Optimal => "optimal",
        Rank::Suboptimal => "sub-optimal",
        Rank::BestFeasible => "best feasible",
    }
}
