use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Action, MdpError};
use crate::affect::Emotion;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub ts_ms: i64,
    pub from: Emotion,
    pub action: Action,
    pub to: Emotion,
}

/// Observed `(s, a, s')` triples, in arrival order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TransitionLog {
    pub entries: Vec<Transition>,
}

impl TransitionLog {
    pub fn push(&mut self, ts_ms: i64, from: Emotion, action: Action, to: Emotion) {
        self.entries.push(Transition { ts_ms, from, action, to });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// `P[action][state][next]`, keyed by name.
pub type TransitionTensor = BTreeMap<Action, BTreeMap<Emotion, BTreeMap<Emotion, f64>>>;

/// Laplace-smoothed transition frequencies:
/// `(count(s,a,s') + k) / (count(s,a,.) + k |S|)`.
pub fn estimate_transitions(log: &TransitionLog, smoothing: f64) -> Result<TransitionTensor, MdpError> {
    if !(smoothing >= 0.0) {
        return Err(MdpError::NegativeSmoothing(smoothing));
    }
    let mut counts = [[[0u64; 4]; 4]; 5];
    let action_index = |a: Action| Action::ALL.iter().position(|&x| x == a).expect("known action");
    for t in &log.entries {
        counts[action_index(t.action)][t.from.index()][t.to.index()] += 1;
    }
    let n_states = Emotion::ALL.len() as f64;
    let mut tensor = TransitionTensor::new();
    for a in Action::ALL {
        let mut per_state = BTreeMap::new();
        for s in Emotion::ALL {
            let row = &counts[action_index(a)][s.index()];
            let total: u64 = row.iter().sum();
            let denom = total as f64 + smoothing * n_states;
            let probs = Emotion::ALL
                .iter()
                .map(|&n| {
                    let p = if denom > 0.0 {
                        (row[n.index()] as f64 + smoothing) / denom
                    } else {
                        // No data and no prior: fall back to uniform.
                        1.0 / n_states
                    };
                    (n, p)
                })
                .collect();
            per_state.insert(s, probs);
        }
        tensor.insert(a, per_state);
    }
    Ok(tensor)
}
