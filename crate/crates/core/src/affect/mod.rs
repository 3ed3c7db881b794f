//! Affect recognition: calibrated features to valence/arousal, then to fuzzy
//! memberships over the four learning emotions.

mod dataset;
mod fuzzy;
mod knn;
mod regressor;
pub mod svr;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dataset::{
    accuracy, calibrate_rows, confusion_matrix, read_dataset, write_dataset, CalibrationMode,
    DatasetRow, LabeledRow, Split, SplitRatios,
};
pub use fuzzy::{classify_emotion, FuzzyConfig};
pub use knn::KnnClassifier;
pub use regressor::{
    fine_kernel_scale, predict_va, train_regressor, HyperParams, TargetReport, TrainingReport, VaRegressor,
    FEATURE_SPACE_VERSION, MIN_TRAINING_ROWS,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AffectError {
    #[error("too few rows: {0} (need at least {1})")]
    TooFewRows(usize, usize),
    #[error("row {row}: label `{field}` = {value} is not finite")]
    NonFiniteLabel { row: usize, field: &'static str, value: f64 },
    #[error("row {row}: label `{field}` = {value} outside [1, 9]")]
    LabelOutOfRange { row: usize, field: &'static str, value: f64 },
    #[error("precondition: feature {index} = {value} outside [0, 1]")]
    FeatureOutOfRange { index: usize, value: f64 },
    #[error("precondition: expected {expected} features, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("untrained model: {0}")]
    Untrained(String),
    #[error("point ({valence}, {arousal}) outside the valence/arousal square")]
    PointOutOfBounds { valence: f64, arousal: f64 },
    #[error("invalid split: {0}")]
    Split(String),
    #[error("dataset: {0}")]
    Dataset(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Emotion {
    Bored,
    Satisfied,
    Curious,
    Confused,
}

impl Emotion {
    /// Fixed order, also the argmax tie-break order.
    pub const ALL: [Emotion; 4] = [
        Emotion::Bored,
        Emotion::Satisfied,
        Emotion::Curious,
        Emotion::Confused,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Emotion::Bored => "bored",
            Emotion::Satisfied => "satisfied",
            Emotion::Curious => "curious",
            Emotion::Confused => "confused",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Emotion> {
        Emotion::ALL.get(i).copied()
    }

    pub fn parse(s: &str) -> Option<Emotion> {
        Emotion::ALL.into_iter().find(|e| e.as_str() == s)
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A point in the valence/arousal plane, each axis in [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaPoint {
    pub valence: f64,
    pub arousal: f64,
}

impl VaPoint {
    pub const fn new(valence: f64, arousal: f64) -> Self {
        Self { valence, arousal }
    }

    pub fn clamped(valence: f64, arousal: f64) -> Self {
        Self {
            valence: valence.clamp(-1.0, 1.0),
            arousal: arousal.clamp(-1.0, 1.0),
        }
    }

    pub fn in_bounds(&self) -> bool {
        self.valence.is_finite()
            && self.arousal.is_finite()
            && (-1.0..=1.0).contains(&self.valence)
            && (-1.0..=1.0).contains(&self.arousal)
    }

    pub fn dist2(&self, other: &VaPoint) -> f64 {
        let dv = self.valence - other.valence;
        let da = self.arousal - other.arousal;
        dv * dv + da * da
    }
}

/// Maps a 1..9 rating onto [-1, 1].
pub fn rescale_label(rating: f64) -> f64 {
    (rating - 5.0) / 4.0
}

/// Inverse of [`rescale_label`].
pub fn rating_from_unit(v: f64) -> f64 {
    5.0 + 4.0 * v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionState {
    /// Memberships in [`Emotion::ALL`] order, summing to one.
    pub memberships: std::collections::BTreeMap<Emotion, f64>,
    pub label: Emotion,
    pub confidence: f64,
}

impl EmotionState {
    pub fn membership(&self, e: Emotion) -> f64 {
        self.memberships.get(&e).copied().unwrap_or(0.0)
    }
}
