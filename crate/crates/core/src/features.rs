//! The six windowed physiological features.
//!
//! Levels (SCL, STL, HR) are moving averages; responses (SCR, STR, HRV) are
//! running deviations, with HRV computed as RMSSD over RR intervals.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Channel, StudentStream};

pub const DEFAULT_WINDOW: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FeatureError {
    #[error("insufficient data: need {needed} values, have {available}")]
    InsufficientData { needed: usize, available: usize },
    #[error("warm-up: channel `{channel}` has {available} samples, needs {needed}")]
    WarmUp {
        channel: Channel,
        needed: usize,
        available: usize,
    },
}

fn recent(values: &[f64], window: usize, needed: usize) -> Result<&[f64], FeatureError> {
    let take = window.min(values.len());
    if take < needed {
        return Err(FeatureError::InsufficientData {
            needed,
            available: take,
        });
    }
    Ok(&values[values.len() - take..])
}

/// Mean of the most recent `min(window, len)` values.
pub fn moving_average(values: &[f64], window: usize) -> Result<f64, FeatureError> {
    let w = recent(values, window, 1)?;
    Ok(w.iter().sum::<f64>() / w.len() as f64)
}

/// Sample standard deviation (n - 1) of the most recent `min(window, len)`
/// values.
pub fn running_deviation(values: &[f64], window: usize) -> Result<f64, FeatureError> {
    let w = recent(values, window, 2)?;
    // Shifting by the first value keeps constant windows exactly zero.
    let shift = w[0];
    let mean = w.iter().map(|x| x - shift).sum::<f64>() / w.len() as f64;
    let ss: f64 = w.iter().map(|x| (x - shift - mean) * (x - shift - mean)).sum();
    Ok((ss / (w.len() - 1) as f64).sqrt())
}

/// Root mean square of successive differences over the most recent window.
pub fn rmssd(rr_intervals: &[f64], window: usize) -> Result<f64, FeatureError> {
    let w = recent(rr_intervals, window, 2)?;
    let ss: f64 = w.windows(2).map(|p| (p[1] - p[0]) * (p[1] - p[0])).sum();
    Ok((ss / (w.len() - 1) as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureName {
    Scr,
    Scl,
    Hr,
    Hrv,
    Str,
    Stl,
}

impl FeatureName {
    /// Canonical feature order used by vectors, datasets and models.
    pub const ALL: [FeatureName; 6] = [
        FeatureName::Scr,
        FeatureName::Scl,
        FeatureName::Hr,
        FeatureName::Hrv,
        FeatureName::Str,
        FeatureName::Stl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureName::Scr => "scr",
            FeatureName::Scl => "scl",
            FeatureName::Hr => "hr",
            FeatureName::Hrv => "hrv",
            FeatureName::Str => "str",
            FeatureName::Stl => "stl",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for FeatureName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelCounts {
    pub hr: usize,
    pub rr: usize,
    pub eda: usize,
    pub temp: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub scr: f64,
    pub scl: f64,
    pub hr: f64,
    pub hrv: f64,
    pub str_resp: f64,
    pub stl: f64,
    pub window_end_ts: i64,
    pub sample_count_per_channel: ChannelCounts,
}

impl FeatureVector {
    /// Builds a vector from values in [`FeatureName::ALL`] order.
    pub fn from_array(values: [f64; 6], window_end_ts: i64) -> Self {
        Self {
            scr: values[0],
            scl: values[1],
            hr: values[2],
            hrv: values[3],
            str_resp: values[4],
            stl: values[5],
            window_end_ts,
            sample_count_per_channel: ChannelCounts::default(),
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.scr, self.scl, self.hr, self.hrv, self.str_resp, self.stl]
    }

    pub fn get(&self, name: FeatureName) -> f64 {
        self.to_array()[name.index()]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

fn channel_window(stream: &StudentStream, channel: Channel, needed: usize) -> Result<Vec<f64>, FeatureError> {
    let values = stream.values(channel);
    if values.len() < needed {
        return Err(FeatureError::WarmUp {
            channel,
            needed,
            available: values.len(),
        });
    }
    Ok(values)
}

/// Computes the six features over the most recent `window` samples of each
/// channel. Partial windows are accepted as long as every deviation feature
/// has at least two samples.
pub fn extract_features(stream: &StudentStream, window: usize) -> Result<FeatureVector, FeatureError> {
    // Channels are checked in a fixed order so the warm-up error is stable.
    let eda = channel_window(stream, Channel::Eda, 2)?;
    let hr = channel_window(stream, Channel::Hr, 1)?;
    let rr = channel_window(stream, Channel::Rr, 2)?;
    let temp = channel_window(stream, Channel::Temp, 2)?;

    let counts = ChannelCounts {
        hr: hr.len().min(window),
        rr: rr.len().min(window),
        eda: eda.len().min(window),
        temp: temp.len().min(window),
    };
    let window_end_ts = Channel::ALL
        .iter()
        .filter_map(|&c| stream.last_ts(c))
        .max()
        .unwrap_or_default();

    Ok(FeatureVector {
        scr: running_deviation(&eda, window)?,
        scl: moving_average(&eda, window)?,
        hr: moving_average(&hr, window)?,
        hrv: rmssd(&rr, window)?,
        str_resp: running_deviation(&temp, window)?,
        stl: moving_average(&temp, window)?,
        window_end_ts,
        sample_count_per_channel: counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{SensorSample, StreamSet};

    #[test]
    fn moving_average_examples() {
        assert_eq!(moving_average(&[1.0, 1.0, 1.0, 1.0], 50).unwrap(), 1.0);
        assert_eq!(moving_average(&[1.0, 2.0, 3.0], 2).unwrap(), 2.5);
        assert!(matches!(
            moving_average(&[], 50),
            Err(FeatureError::InsufficientData { .. })
        ));
    }

    #[test]
    fn running_deviation_examples() {
        assert_eq!(running_deviation(&[5.0, 5.0, 5.0], 50).unwrap(), 0.0);
        assert!((running_deviation(&[1.0, 3.0], 50).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        assert!(running_deviation(&[7.0], 50).is_err());
        // Window of one cannot produce a deviation.
        assert!(running_deviation(&[1.0, 2.0, 3.0], 1).is_err());
    }

    #[test]
    fn rmssd_examples() {
        assert_eq!(rmssd(&[800.0, 800.0, 800.0], 50).unwrap(), 0.0);
        assert!((rmssd(&[800.0, 810.0, 790.0], 50).unwrap() - 250f64.sqrt()).abs() < 1e-12);
        assert!(rmssd(&[1000.0], 50).is_err());
    }

    fn constant_stream(n: usize) -> StreamSet {
        let mut set = StreamSet::default();
        for i in 0..n as i64 {
            let t = i * 1000;
            set.ingest_sample(&SensorSample::new("s", t, Channel::Eda, 2.0)).unwrap();
            set.ingest_sample(&SensorSample::new("s", t, Channel::Hr, 70.0)).unwrap();
            set.ingest_sample(&SensorSample::new("s", t, Channel::Rr, 850.0)).unwrap();
            set.ingest_sample(&SensorSample::new("s", t, Channel::Temp, 33.0)).unwrap();
        }
        set
    }

    #[test]
    fn constant_streams_give_constant_features() {
        let set = constant_stream(60);
        let fv = extract_features(set.get("s").unwrap(), DEFAULT_WINDOW).unwrap();
        assert_eq!(fv.to_array(), [0.0, 2.0, 70.0, 0.0, 0.0, 33.0]);
        assert_eq!(fv.window_end_ts, 59_000);
        assert_eq!(fv.sample_count_per_channel.eda, 50);
    }

    #[test]
    fn partial_window_uses_available_samples() {
        let set = constant_stream(10);
        let fv = extract_features(set.get("s").unwrap(), DEFAULT_WINDOW).unwrap();
        assert_eq!(fv.sample_count_per_channel.hr, 10);
        assert_eq!(fv.sample_count_per_channel.temp, 10);
    }

    #[test]
    fn single_eda_sample_is_warm_up() {
        let set = constant_stream(1);
        let err = extract_features(set.get("s").unwrap(), DEFAULT_WINDOW).unwrap_err();
        assert_eq!(
            err,
            FeatureError::WarmUp {
                channel: Channel::Eda,
                needed: 2,
                available: 1
            }
        );
    }
}
