use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::EngineError;
use crate::affect::{classify_emotion, Emotion, EmotionState, FuzzyConfig, VaPoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentPoint {
    pub student_id: String,
    pub point: VaPoint,
    pub weight: f64,
    pub label: Emotion,
}

/// Classroom-level affect: weighted VA centroid, its classification, and
/// per-emotion head counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectiveState {
    pub counts: BTreeMap<Emotion, usize>,
    pub students: Vec<StudentPoint>,
    pub centroid: VaPoint,
    pub collective: EmotionState,
    /// Number of distinct emotions with at least one student.
    pub distinct_emotions: usize,
}

/// Weighted centroid `sum W_i p_i / sum W_i`, classified with `fuzzy`.
pub fn aggregate(points: &[(String, VaPoint, f64)], fuzzy: &FuzzyConfig) -> Result<CollectiveState, EngineError> {
    if points.is_empty() {
        return Err(EngineError::NoReportingStudents);
    }
    let mut students = Vec::with_capacity(points.len());
    let mut counts: BTreeMap<Emotion, usize> = Emotion::ALL.iter().map(|&e| (e, 0)).collect();
    let (mut sw, mut sv, mut sa) = (0.0, 0.0, 0.0);
    for (id, p, w) in points {
        if !(*w > 0.0 && w.is_finite()) {
            return Err(EngineError::InvalidWeight {
                student_id: id.clone(),
                weight: *w,
            });
        }
        let state = classify_emotion(*p, fuzzy).map_err(EngineError::Affect)?;
        *counts.get_mut(&state.label).expect("all emotions present") += 1;
        sw += w;
        sv += w * p.valence;
        sa += w * p.arousal;
        students.push(StudentPoint {
            student_id: id.clone(),
            point: *p,
            weight: *w,
            label: state.label,
        });
    }
    let centroid = VaPoint::clamped(sv / sw, sa / sw);
    let collective = classify_emotion(centroid, fuzzy).map_err(EngineError::Affect)?;
    let distinct_emotions = counts.values().filter(|&&n| n > 0).count();
    Ok(CollectiveState {
        counts,
        students,
        centroid,
        collective,
        distinct_emotions,
    })
}
