use serde::{Deserialize, Serialize};

use crate::mdp::{Action, Policy};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PacePreference {
    Slow,
    #[default]
    Medium,
    Fast,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContentStyle {
    Illustrations,
    #[default]
    Descriptions,
}

/// Pre-lecture questionnaire answers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentPreferences {
    pub pace_preference: PacePreference,
    pub content_style: ContentStyle,
}

/// Strict-majority preferences of a class; `None` when no option has a
/// strict majority over the others.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregatedPreferences {
    pub pace: Option<PacePreference>,
    pub content: Option<ContentStyle>,
}

fn plurality<T: Copy + Eq>(items: impl Iterator<Item = T>, options: &[T]) -> Option<T> {
    let items: Vec<T> = items.collect();
    let counts: Vec<usize> = options.iter().map(|o| items.iter().filter(|x| *x == o).count()).collect();
    let top = *counts.iter().max()?;
    if top == 0 || counts.iter().filter(|&&c| c == top).count() > 1 {
        return None;
    }
    counts.iter().position(|&c| c == top).map(|i| options[i])
}

impl AggregatedPreferences {
    pub fn from_students<'a>(prefs: impl IntoIterator<Item = &'a StudentPreferences>) -> Self {
        let prefs: Vec<&StudentPreferences> = prefs.into_iter().collect();
        Self {
            pace: plurality(
                prefs.iter().map(|p| p.pace_preference),
                &[PacePreference::Slow, PacePreference::Medium, PacePreference::Fast],
            ),
            content: plurality(
                prefs.iter().map(|p| p.content_style),
                &[ContentStyle::Illustrations, ContentStyle::Descriptions],
            ),
        }
    }

    /// Actions that receive the preference bias.
    pub fn favoured_actions(&self) -> Vec<Action> {
        let mut out = Vec::new();
        match self.pace {
            Some(PacePreference::Fast) => out.push(Action::IncreasePace),
            Some(PacePreference::Slow) => out.push(Action::DecreasePace),
            _ => {}
        }
        if self.content == Some(ContentStyle::Illustrations) {
            out.push(Action::EnrichContent);
        }
        out
    }
}

/// Adds `delta` to the Q value of every favoured action and re-derives the
/// optimal and sub-optimal maps. `delta = None` uses `0.05 * max |Q|`.
pub fn apply_preferences(policy: &Policy, prefs: &AggregatedPreferences, delta: Option<f64>) -> Policy {
    let delta = delta.unwrap_or_else(|| 0.05 * policy.max_abs_q());
    let mut adjusted = policy.clone();
    let favoured = prefs.favoured_actions();
    for row in adjusted.q_values.values_mut() {
        for a in &favoured {
            if let Some(q) = row.get_mut(a) {
                *q += delta;
            }
        }
    }
    adjusted.rederive();
    adjusted
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::affect::Emotion;

    fn policy_from(q: &[(Action, f64)]) -> Policy {
        let row: BTreeMap<Action, f64> = q.iter().copied().collect();
        let mut p = Policy {
            optimal: BTreeMap::new(),
            suboptimal: BTreeMap::new(),
            q_values: BTreeMap::from([(Emotion::Satisfied, row)]),
            values: BTreeMap::new(),
            iterations: 0,
            converged: true,
            residual: 0.0,
            action_order: Action::ALL.to_vec(),
        };
        p.rederive();
        p
    }

    fn prefs(pace: PacePreference, style: ContentStyle, n: usize) -> Vec<StudentPreferences> {
        vec![
            StudentPreferences {
                pace_preference: pace,
                content_style: style,
            };
            n
        ]
    }

    #[test]
    fn zero_delta_is_identity() {
        let p = policy_from(&[
            (Action::IncreasePace, 0.1),
            (Action::DecreasePace, 0.5),
            (Action::SimplifyContent, 0.2),
            (Action::NoChange, 0.6),
            (Action::EnrichContent, 0.3),
        ]);
        let agg = AggregatedPreferences::from_students(&prefs(PacePreference::Slow, ContentStyle::Illustrations, 3));
        assert_eq!(apply_preferences(&p, &agg, Some(0.0)), p);
    }

    #[test]
    fn bias_breaks_exact_tie() {
        let p = policy_from(&[
            (Action::IncreasePace, 0.5),
            (Action::DecreasePace, 0.5),
            (Action::SimplifyContent, 0.0),
            (Action::NoChange, 0.0),
            (Action::EnrichContent, 0.0),
        ]);
        let mut students = prefs(PacePreference::Fast, ContentStyle::Descriptions, 2);
        students.push(StudentPreferences::default());
        let agg = AggregatedPreferences::from_students(&students);
        assert_eq!(agg.pace, Some(PacePreference::Fast));
        let adj = apply_preferences(&p, &agg, None);
        assert_eq!(adj.optimal[&Emotion::Satisfied], Action::IncreasePace);
    }

    #[test]
    fn small_gap_flips_to_preferred_pace() {
        // decrease_pace trails no_change by 0.02; default delta is 0.05 * 0.6 = 0.03.
        let p = policy_from(&[
            (Action::IncreasePace, 0.1),
            (Action::DecreasePace, 0.58),
            (Action::SimplifyContent, 0.2),
            (Action::NoChange, 0.6),
            (Action::EnrichContent, 0.3),
        ]);
        assert_eq!(p.optimal[&Emotion::Satisfied], Action::NoChange);
        let agg = AggregatedPreferences::from_students(&prefs(PacePreference::Slow, ContentStyle::Descriptions, 4));
        let adj = apply_preferences(&p, &agg, None);
        assert_eq!(adj.optimal[&Emotion::Satisfied], Action::DecreasePace);
        assert_eq!(adj.suboptimal[&Emotion::Satisfied], Action::NoChange);
    }

    #[test]
    fn split_vote_has_no_majority() {
        let mut students = prefs(PacePreference::Fast, ContentStyle::Illustrations, 1);
        students.extend(prefs(PacePreference::Slow, ContentStyle::Descriptions, 1));
        let agg = AggregatedPreferences::from_students(&students);
        assert_eq!(agg, AggregatedPreferences::default());
        assert!(agg.favoured_actions().is_empty());
    }
}
