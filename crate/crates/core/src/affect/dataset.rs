use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{rescale_label, AffectError, Emotion};
use crate::calibration::{CalibrationConfig, CalibrationState, OutputRange};

/// One labeled row of the training CSV. Features are raw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub user_id: String,
    pub stimulus_id: String,
    pub scr: f64,
    pub scl: f64,
    pub hr: f64,
    pub hrv: f64,
    #[serde(rename = "str")]
    pub str_resp: f64,
    pub stl: f64,
    /// 1..9 rating.
    pub valence: f64,
    /// 1..9 rating.
    pub arousal: f64,
}

impl DatasetRow {
    pub fn features(&self) -> [f64; 6] {
        [self.scr, self.scl, self.hr, self.hrv, self.str_resp, self.stl]
    }
}

/// Calibrated features plus labels rescaled to [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRow {
    pub features: Vec<f64>,
    pub valence: f64,
    pub arousal: f64,
}

pub fn read_dataset<R: Read>(reader: R) -> Result<Vec<DatasetRow>, AffectError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let expected = [
        "user_id",
        "stimulus_id",
        "scr",
        "scl",
        "hr",
        "hrv",
        "str",
        "stl",
        "valence",
        "arousal",
    ];
    let headers = rdr
        .headers()
        .map_err(|e| AffectError::Dataset(e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(AffectError::Dataset(format!(
            "header mismatch: expected {}, got {}",
            expected.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| AffectError::Dataset(format!("row {}: {e}", i + 1))))
        .collect()
}

pub fn write_dataset<W: Write>(writer: W, rows: &[DatasetRow]) -> Result<(), AffectError> {
    let mut wtr = csv::Writer::from_writer(writer);
    for row in rows {
        wtr.serialize(row).map_err(|e| AffectError::Dataset(e.to_string()))?;
    }
    wtr.flush().map_err(|e| AffectError::Dataset(e.to_string()))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMode {
    /// Min-max per user, over all of that user's rows.
    #[default]
    PerUser,
    /// One min-max over the whole dataset; no personalization.
    Global,
}

/// Applies min-max calibration to every row and rescales the labels.
pub fn calibrate_rows(rows: &[DatasetRow], mode: CalibrationMode) -> Vec<LabeledRow> {
    let mut state = CalibrationState::new(CalibrationConfig {
        min_samples: 1,
        warmup_samples: None,
        output_range: OutputRange::UnitInterval,
    });
    let key = |row: &DatasetRow| match mode {
        CalibrationMode::PerUser => row.user_id.clone(),
        CalibrationMode::Global => String::new(),
    };
    for row in rows {
        state.update_values(&key(row), &row.features());
    }
    rows.iter()
        .map(|row| {
            let calibrated = state
                .normalize_values(&key(row), &row.features())
                .expect("every key has been observed");
            LabeledRow {
                features: calibrated.values.to_vec(),
                valence: rescale_label(row.valence),
                arousal: rescale_label(row.arousal),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 70.0,
            validation: 15.0,
            test: 15.0,
        }
    }
}

impl SplitRatios {
    /// Parses `70:15:15`.
    pub fn parse(s: &str) -> Result<Self, AffectError> {
        let parts: Vec<f64> = s
            .split(':')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| AffectError::Split(format!("`{s}`: {e}")))?;
        match parts[..] {
            [train, validation, test]
                if parts.iter().all(|p| p.is_finite() && *p >= 0.0) && train > 0.0 && validation > 0.0 && test > 0.0 =>
            {
                Ok(Self { train, validation, test })
            }
            _ => Err(AffectError::Split(format!(
                "`{s}`: expected three positive ratios like 70:15:15"
            ))),
        }
    }
}

/// Row indices of a seeded train/validation/test partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub ratios: SplitRatios,
    pub n_rows: usize,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn new(n_rows: usize, ratios: SplitRatios, seed: u64) -> Self {
        let mut idx: Vec<usize> = (0..n_rows).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let total = ratios.train + ratios.validation + ratios.test;
        let n_train = ((n_rows as f64) * ratios.train / total).round() as usize;
        let n_val = ((n_rows as f64) * ratios.validation / total).round() as usize;
        let n_val = n_val.min(n_rows - n_train);
        let test = idx.split_off(n_train + n_val);
        let validation = idx.split_off(n_train);
        Self {
            seed,
            ratios,
            n_rows,
            train: idx,
            validation,
            test,
        }
    }
}

pub fn accuracy(truth: &[Emotion], predicted: &[Emotion]) -> f64 {
    assert_eq!(truth.len(), predicted.len());
    if truth.is_empty() {
        return 0.0;
    }
    let hits = truth.iter().zip(predicted).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}

/// Row-normalized confusion matrix: true label rows, predicted columns. Rows
/// without any true instance stay zero.
pub fn confusion_matrix(truth: &[Emotion], predicted: &[Emotion]) -> BTreeMap<Emotion, BTreeMap<Emotion, f64>> {
    let mut counts = [[0usize; 4]; 4];
    for (t, p) in truth.iter().zip(predicted) {
        counts[t.index()][p.index()] += 1;
    }
    Emotion::ALL
        .iter()
        .map(|&t| {
            let row_total: usize = counts[t.index()].iter().sum();
            let row = Emotion::ALL
                .iter()
                .map(|&p| {
                    let v = if row_total == 0 {
                        0.0
                    } else {
                        counts[t.index()][p.index()] as f64 / row_total as f64
                    };
                    (p, v)
                })
                .collect();
            (t, row)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(user: &str, hr: f64) -> DatasetRow {
        DatasetRow {
            user_id: user.into(),
            stimulus_id: "x".into(),
            scr: 0.5,
            scl: 3.0,
            hr,
            hrv: 40.0,
            str_resp: 0.1,
            stl: 33.0,
            valence: 5.0,
            arousal: 9.0,
        }
    }

    #[test]
    fn csv_round_trip_keeps_header_order() {
        let rows = vec![row("u1", 70.0), row("u2", 80.5)];
        let mut buf = Vec::new();
        write_dataset(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("user_id,stimulus_id,scr,scl,hr,hrv,str,stl,valence,arousal\n"));
        assert_eq!(read_dataset(&buf[..]).unwrap(), rows);
    }

    #[test]
    fn wrong_header_is_rejected() {
        let text = "user,stimulus_id,scr,scl,hr,hrv,str,stl,valence,arousal\n";
        assert!(matches!(read_dataset(text.as_bytes()), Err(AffectError::Dataset(_))));
    }

    #[test]
    fn per_user_calibration_is_independent_of_baseline() {
        let rows = vec![row("a", 60.0), row("a", 70.0), row("b", 90.0), row("b", 110.0)];
        let out = calibrate_rows(&rows, CalibrationMode::PerUser);
        let hr: Vec<f64> = out.iter().map(|r| r.features[2]).collect();
        assert_eq!(hr, vec![0.0, 1.0, 0.0, 1.0]);
        assert_eq!(out[0].valence, 0.0);
        assert_eq!(out[0].arousal, 1.0);
        let global = calibrate_rows(&rows, CalibrationMode::Global);
        assert_eq!(global[1].features[2], 0.2);
    }

    #[test]
    fn split_partitions_all_rows() {
        let s = Split::new(100, SplitRatios::default(), 3);
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (70, 15, 15));
        let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(Split::new(100, SplitRatios::default(), 3), s);
    }

    #[test]
    fn split_ratio_parsing() {
        assert_eq!(SplitRatios::parse("70:15:15").unwrap(), SplitRatios::default());
        assert!(SplitRatios::parse("70:30").is_err());
        assert!(SplitRatios::parse("a:b:c").is_err());
    }

    #[test]
    fn confusion_rows_are_proportions() {
        use Emotion::*;
        let m = confusion_matrix(&[Bored, Bored, Curious], &[Bored, Confused, Curious]);
        assert_eq!(m[&Bored][&Bored], 0.5);
        assert_eq!(m[&Bored][&Confused], 0.5);
        assert_eq!(m[&Curious][&Curious], 1.0);
        assert_eq!(m[&Satisfied].values().sum::<f64>(), 0.0);
        assert!((accuracy(&[Bored, Bored, Curious], &[Bored, Confused, Curious]) - 2.0 / 3.0).abs() < 1e-15);
    }
}
