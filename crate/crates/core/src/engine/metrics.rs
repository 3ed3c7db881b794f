use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::events::{ActionSource, SessionEvent};
use crate::affect::Emotion;
use crate::mdp::ActionKind;

/// Session measurements. Every field is a fold over the event log, see
/// [`SessionMetrics::apply`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    /// Per-student time in each emotion label, ms.
    pub dwell_ms: BTreeMap<String, BTreeMap<Emotion, u64>>,
    pub collective_dwell_ms: BTreeMap<Emotion, u64>,
    pub suggestion_count: u64,
    pub intervention_count: u64,
    pub interventions_by_kind: BTreeMap<ActionKind, u64>,
    pub decision_latency_ms: Vec<f64>,
    pub ticks: u64,
    /// Student-ticks skipped because a student was still warming up.
    pub skipped_students: u64,
    pub live_since_ms: Option<i64>,
    pub ended_ms: Option<i64>,
    pub last_event_ms: Option<i64>,
    /// First and last labelled tick per student.
    pub observed_ms: BTreeMap<String, (i64, i64)>,
    pub last_collective_tick_ms: Option<i64>,
}

impl SessionMetrics {
    /// Folds one event into the metrics.
    pub fn apply(&mut self, event: &SessionEvent) {
        let ts = event.ts_ms();
        self.last_event_ms = Some(self.last_event_ms.map_or(ts, |t| t.max(ts)));
        match event {
            SessionEvent::WentLive { ts_ms } => self.live_since_ms = Some(*ts_ms),
            SessionEvent::Ended { ts_ms } => self.ended_ms = Some(*ts_ms),
            SessionEvent::Tick {
                ts_ms,
                labels,
                collective,
                skipped,
                latency_ms,
                ..
            } => {
                self.ticks += 1;
                self.skipped_students += *skipped as u64;
                self.decision_latency_ms.push(*latency_ms);
                for (student, label) in labels {
                    let span = self.observed_ms.entry(student.clone()).or_insert((*ts_ms, *ts_ms));
                    let dt = (*ts_ms - span.1).max(0) as u64;
                    span.1 = *ts_ms;
                    *self
                        .dwell_ms
                        .entry(student.clone())
                        .or_default()
                        .entry(*label)
                        .or_default() += dt;
                }
                if let Some(label) = collective {
                    if let Some(prev) = self.last_collective_tick_ms {
                        *self.collective_dwell_ms.entry(*label).or_default() += (*ts_ms - prev).max(0) as u64;
                    }
                    self.last_collective_tick_ms = Some(*ts_ms);
                }
            }
            SessionEvent::Suggestion(_) => self.suggestion_count += 1,
            SessionEvent::Intervention { kind, .. } => {
                self.intervention_count += 1;
                *self.interventions_by_kind.entry(*kind).or_default() += 1;
            }
            SessionEvent::Action {
                action,
                source: ActionSource::Override,
                ..
            } => {
                self.intervention_count += 1;
                *self.interventions_by_kind.entry(action.kind()).or_default() += 1;
            }
            SessionEvent::SessionStarted { .. }
            | SessionEvent::Samples { .. }
            | SessionEvent::Action { .. }
            | SessionEvent::Transition(_) => {}
        }
    }

    /// Rebuilds metrics from a complete event log.
    pub fn replay<'a>(events: impl IntoIterator<Item = &'a SessionEvent>) -> Self {
        let mut m = Self::default();
        for e in events {
            m.apply(e);
        }
        m
    }

    /// Live time covered so far, ms.
    pub fn elapsed_ms(&self) -> i64 {
        match (self.live_since_ms, self.ended_ms.or(self.last_event_ms)) {
            (Some(start), Some(end)) => (end - start).max(0),
            _ => 0,
        }
    }

    pub fn interventions_per_minute(&self) -> f64 {
        rate_per_minute(self.intervention_count, self.elapsed_ms())
    }

    /// Class-level rate divided over `students`.
    pub fn interventions_per_student_minute(&self, students: usize) -> f64 {
        if students == 0 {
            return 0.0;
        }
        self.interventions_per_minute() / students as f64
    }

    /// Total labelled time of a student, ms.
    pub fn observed_time_ms(&self, student: &str) -> u64 {
        self.observed_ms
            .get(student)
            .map_or(0, |(a, b)| (b - a).max(0) as u64)
    }

    /// Fraction of a student's labelled time spent in `emotion`.
    pub fn dwell_fraction(&self, student: &str, emotion: Emotion) -> Option<f64> {
        let dwell = self.dwell_ms.get(student)?;
        let total: u64 = dwell.values().sum();
        (total > 0).then(|| dwell.get(&emotion).copied().unwrap_or(0) as f64 / total as f64)
    }

    /// Mean over students of [`Self::dwell_fraction`].
    pub fn mean_dwell_fraction(&self, emotion: Emotion) -> f64 {
        let fractions: Vec<f64> = self
            .dwell_ms
            .keys()
            .filter_map(|s| self.dwell_fraction(s, emotion))
            .collect();
        if fractions.is_empty() {
            0.0
        } else {
            fractions.iter().sum::<f64>() / fractions.len() as f64
        }
    }

    pub fn collective_dwell_fraction(&self, emotion: Emotion) -> f64 {
        let total: u64 = self.collective_dwell_ms.values().sum();
        if total == 0 {
            return 0.0;
        }
        self.collective_dwell_ms.get(&emotion).copied().unwrap_or(0) as f64 / total as f64
    }

    /// Same metrics without wall-clock latency samples.
    pub fn without_latency(&self) -> Self {
        Self {
            decision_latency_ms: Vec::new(),
            ..self.clone()
        }
    }
}

/// Events per minute over `elapsed_ms`.
pub fn rate_per_minute(count: u64, elapsed_ms: i64) -> f64 {
    if elapsed_ms <= 0 {
        return 0.0;
    }
    count as f64 / (elapsed_ms as f64 / 60_000.0)
}
