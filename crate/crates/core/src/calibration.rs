//! Per-student min-max calibration of raw features.
//!
//! Extrema accumulate during a warm-up epoch and are then frozen, so later
//! values are mapped with `(f - f_min) / (f_max - f_min)` and clamped to the
//! unit interval.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureName, FeatureVector};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CalibrationError {
    #[error("calibration required for student `{student_id}`: {count} of {required} samples")]
    CalibrationRequired {
        student_id: String,
        count: u64,
        required: u64,
    },
}

/// Output range of calibrated features.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputRange {
    #[default]
    UnitInterval,
    /// `2 f' - 1`, mapping onto [-1, 1].
    Symmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    /// Samples required before [`CalibrationState::normalize`] is allowed.
    pub min_samples: u64,
    /// Extrema freeze once this many samples were seen. `None` never freezes.
    pub warmup_samples: Option<u64>,
    pub output_range: OutputRange,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            min_samples: 50,
            warmup_samples: Some(300),
            output_range: OutputRange::UnitInterval,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtrema {
    pub f_min: f64,
    pub f_max: f64,
    pub count: u64,
    pub frozen: bool,
}

impl FeatureExtrema {
    fn first(value: f64) -> Self {
        Self {
            f_min: value,
            f_max: value,
            count: 1,
            frozen: false,
        }
    }

    /// Min-max maps `value` into [0, 1]. A degenerate range yields 0.5.
    pub fn scale(&self, value: f64) -> (f64, bool) {
        let span = self.f_max - self.f_min;
        if span <= 0.0 {
            return (0.5, true);
        }
        (((value - self.f_min) / span).clamp(0.0, 1.0), false)
    }
}

/// Normalized features in [`FeatureName::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibratedFeatures {
    pub values: [f64; 6],
    /// Set where the calibration range of a feature was degenerate.
    pub low_variance: [bool; 6],
}

type StudentExtrema = BTreeMap<FeatureName, FeatureExtrema>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationState {
    #[serde(default)]
    pub config: CalibrationConfig,
    pub students: BTreeMap<String, StudentExtrema>,
}

impl Default for CalibrationState {
    fn default() -> Self {
        Self::new(CalibrationConfig::default())
    }
}

impl CalibrationState {
    pub fn new(config: CalibrationConfig) -> Self {
        Self {
            config,
            students: BTreeMap::new(),
        }
    }

    /// Widens the student's extrema to include `features`. Frozen extrema are
    /// left untouched.
    pub fn update_extrema(&mut self, student_id: &str, features: &FeatureVector) {
        self.update_values(student_id, &features.to_array());
    }

    pub fn update_values(&mut self, student_id: &str, values: &[f64; 6]) {
        let warmup = self.config.warmup_samples;
        let entry = self.students.entry(student_id.to_owned()).or_default();
        for name in FeatureName::ALL {
            let value = values[name.index()];
            debug_assert!(value.is_finite(), "calibration input must be finite");
            match entry.get_mut(&name) {
                None => {
                    entry.insert(name, FeatureExtrema::first(value));
                }
                Some(ext) if ext.frozen => {}
                Some(ext) => {
                    ext.f_min = ext.f_min.min(value);
                    ext.f_max = ext.f_max.max(value);
                    ext.count += 1;
                }
            }
            if let (Some(limit), Some(ext)) = (warmup, entry.get_mut(&name)) {
                if ext.count >= limit {
                    ext.frozen = true;
                }
            }
        }
    }

    pub fn freeze(&mut self, student_id: &str) {
        if let Some(entry) = self.students.get_mut(student_id) {
            entry.values_mut().for_each(|e| e.frozen = true);
        }
    }

    pub fn freeze_all(&mut self) {
        for entry in self.students.values_mut() {
            entry.values_mut().for_each(|e| e.frozen = true);
        }
    }

    pub fn count(&self, student_id: &str) -> u64 {
        self.students
            .get(student_id)
            .and_then(|e| e.values().map(|x| x.count).min())
            .unwrap_or(0)
    }

    pub fn is_frozen(&self, student_id: &str) -> bool {
        self.students
            .get(student_id)
            .is_some_and(|e| !e.is_empty() && e.values().all(|x| x.frozen))
    }

    pub fn extrema(&self, student_id: &str, feature: FeatureName) -> Option<&FeatureExtrema> {
        self.students.get(student_id)?.get(&feature)
    }

    pub fn normalize(&self, student_id: &str, features: &FeatureVector) -> Result<CalibratedFeatures, CalibrationError> {
        self.normalize_values(student_id, &features.to_array())
    }

    pub fn normalize_values(&self, student_id: &str, values: &[f64; 6]) -> Result<CalibratedFeatures, CalibrationError> {
        let count = self.count(student_id);
        let entry = match self.students.get(student_id) {
            Some(e) if count >= self.config.min_samples && e.len() == FeatureName::ALL.len() => e,
            _ => {
                return Err(CalibrationError::CalibrationRequired {
                    student_id: student_id.to_owned(),
                    count,
                    required: self.config.min_samples,
                })
            }
        };
        let mut out = CalibratedFeatures {
            values: [0.0; 6],
            low_variance: [false; 6],
        };
        for name in FeatureName::ALL {
            let (v, degenerate) = entry[&name].scale(values[name.index()]);
            out.values[name.index()] = match self.config.output_range {
                OutputRange::UnitInterval => v,
                OutputRange::Symmetric => 2.0 * v - 1.0,
            };
            out.low_variance[name.index()] = degenerate;
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("calibration state serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(hr: f64) -> FeatureVector {
        FeatureVector::from_array([0.1, 2.0, hr, 30.0, 0.05, 33.0], 0)
    }

    fn cfg(min_samples: u64) -> CalibrationConfig {
        CalibrationConfig {
            min_samples,
            warmup_samples: None,
            output_range: OutputRange::UnitInterval,
        }
    }

    #[test]
    fn first_observation_sets_both_extrema() {
        let mut st = CalibrationState::new(cfg(1));
        st.update_extrema("s", &fv(70.0));
        let e = st.extrema("s", FeatureName::Hr).unwrap();
        assert_eq!((e.f_min, e.f_max, e.count), (70.0, 70.0, 1));
    }

    #[test]
    fn extrema_widen_only_when_exceeded() {
        let mut st = CalibrationState::new(cfg(1));
        st.update_extrema("s", &fv(60.0));
        st.update_extrema("s", &fv(80.0));
        st.update_extrema("s", &fv(85.0));
        assert_eq!(st.extrema("s", FeatureName::Hr).unwrap().f_max, 85.0);
        st.update_extrema("s", &fv(70.0));
        let e = st.extrema("s", FeatureName::Hr).unwrap();
        assert_eq!((e.f_min, e.f_max), (60.0, 85.0));
    }

    #[test]
    fn min_max_endpoints_and_midpoint() {
        let mut st = CalibrationState::new(cfg(2));
        st.update_extrema("s", &fv(0.0));
        st.update_extrema("s", &fv(10.0));
        let hr = FeatureName::Hr.index();
        assert_eq!(st.normalize("s", &fv(5.0)).unwrap().values[hr], 0.5);
        assert_eq!(st.normalize("s", &fv(0.0)).unwrap().values[hr], 0.0);
        assert_eq!(st.normalize("s", &fv(10.0)).unwrap().values[hr], 1.0);
        // Values beyond the frozen range are clamped.
        assert_eq!(st.normalize("s", &fv(14.0)).unwrap().values[hr], 1.0);
    }

    #[test]
    fn degenerate_feature_maps_to_half_with_flag() {
        let mut st = CalibrationState::new(cfg(2));
        st.update_extrema("s", &fv(60.0));
        st.update_extrema("s", &fv(61.0));
        let out = st.normalize("s", &fv(60.5)).unwrap();
        let stl = FeatureName::Stl.index();
        assert_eq!(out.values[stl], 0.5);
        assert!(out.low_variance[stl]);
        assert!(!out.low_variance[FeatureName::Hr.index()]);
    }

    #[test]
    fn uncalibrated_student_is_rejected() {
        let mut st = CalibrationState::default();
        assert!(matches!(
            st.normalize("s", &fv(60.0)),
            Err(CalibrationError::CalibrationRequired { count: 0, .. })
        ));
        for i in 0..49 {
            st.update_extrema("s", &fv(60.0 + i as f64));
        }
        assert!(st.normalize("s", &fv(60.0)).is_err());
        st.update_extrema("s", &fv(70.0));
        assert!(st.normalize("s", &fv(60.0)).is_ok());
    }

    #[test]
    fn extrema_freeze_after_warmup() {
        let mut st = CalibrationState::new(CalibrationConfig {
            min_samples: 2,
            warmup_samples: Some(3),
            output_range: OutputRange::UnitInterval,
        });
        for hr in [60.0, 70.0, 65.0] {
            st.update_extrema("s", &fv(hr));
        }
        assert!(st.is_frozen("s"));
        st.update_extrema("s", &fv(200.0));
        let e = st.extrema("s", FeatureName::Hr).unwrap();
        assert_eq!((e.f_max, e.count), (70.0, 3));
    }

    #[test]
    fn symmetric_range_remaps() {
        let mut st = CalibrationState::new(CalibrationConfig {
            output_range: OutputRange::Symmetric,
            ..cfg(2)
        });
        st.update_extrema("s", &fv(0.0));
        st.update_extrema("s", &fv(10.0));
        let hr = FeatureName::Hr.index();
        assert_eq!(st.normalize("s", &fv(0.0)).unwrap().values[hr], -1.0);
        assert_eq!(st.normalize("s", &fv(10.0)).unwrap().values[hr], 1.0);
    }

    #[test]
    fn json_uses_documented_field_names() {
        let mut st = CalibrationState::new(cfg(1));
        st.update_extrema("s1", &fv(70.0));
        let v: serde_json::Value = serde_json::from_str(&st.to_json()).unwrap();
        let hr = &v["students"]["s1"]["hr"];
        for key in ["f_min", "f_max", "count", "frozen"] {
            assert!(hr.get(key).is_some(), "missing {key}");
        }
        assert_eq!(CalibrationState::from_json(&st.to_json()).unwrap(), st);
    }
}
