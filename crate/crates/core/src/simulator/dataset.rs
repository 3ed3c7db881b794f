use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::population::{gaussian, PopulationPreset, UserProfile};
use super::SimError;
use crate::affect::{
    accuracy, calibrate_rows, classify_emotion, confusion_matrix, predict_va, rating_from_unit, CalibrationMode,
    DatasetRow, Emotion, FuzzyConfig, VaPoint, VaRegressor,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub n_users: usize,
    pub rows_per_user: usize,
    pub seed: u64,
    /// Emotions whose centers ground-truth points are drawn around.
    pub emotions: Vec<Emotion>,
}

impl GenerationConfig {
    pub fn new(n_users: usize, rows_per_user: usize, seed: u64) -> Self {
        Self {
            n_users,
            rows_per_user,
            seed,
            emotions: Emotion::ALL.to_vec(),
        }
    }
}

/// Latent valence/arousal behind one dataset row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub user_id: String,
    pub stimulus_id: String,
    pub valence: f64,
    pub arousal: f64,
    pub emotion: Emotion,
}

impl TruthRow {
    pub fn point(&self) -> VaPoint {
        VaPoint::new(self.valence, self.arousal)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDataset {
    pub profiles: Vec<UserProfile>,
    pub rows: Vec<DatasetRow>,
    pub truth: Vec<TruthRow>,
}

pub fn user_id(i: usize) -> String {
    format!("u{i:02}")
}

/// Draws a VA point around the center of `emotion`.
pub(crate) fn draw_point<R: Rng>(preset: &PopulationPreset, fuzzy: &FuzzyConfig, emotion: Emotion, rng: &mut R) -> VaPoint {
    let c = fuzzy.center(emotion);
    VaPoint::clamped(
        c.valence + gaussian(rng, preset.va_spread),
        c.arousal + gaussian(rng, preset.va_spread),
    )
}

/// Labeled rows with raw features from per-user affine maps of the latent
/// VA point, plus the latent points themselves.
pub fn generate_dataset(preset: &PopulationPreset, cfg: &GenerationConfig) -> Result<GeneratedDataset, SimError> {
    preset.validate()?;
    if cfg.n_users < 2 {
        return Err(SimError::Config(format!("n_users must be at least 2, got {}", cfg.n_users)));
    }
    if cfg.rows_per_user == 0 || cfg.emotions.is_empty() {
        return Err(SimError::Config("rows_per_user and emotions must be non-empty".into()));
    }
    let fuzzy = FuzzyConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let profiles: Vec<UserProfile> = (0..cfg.n_users)
        .map(|i| preset.sample_profile(user_id(i), &mut rng))
        .collect();
    let mut rows = Vec::with_capacity(cfg.n_users * cfg.rows_per_user);
    let mut truth = Vec::with_capacity(rows.capacity());
    for profile in &profiles {
        for j in 0..cfg.rows_per_user {
            let emotion = cfg.emotions[rng.random_range(0..cfg.emotions.len())];
            let p = draw_point(preset, &fuzzy, emotion, &mut rng);
            let f = preset.noisy_features(profile, p, &mut rng);
            let label = VaPoint::clamped(
                p.valence + gaussian(&mut rng, preset.label_noise),
                p.arousal + gaussian(&mut rng, preset.label_noise),
            );
            let stimulus_id = format!("s{j:04}");
            rows.push(DatasetRow {
                user_id: profile.user_id.clone(),
                stimulus_id: stimulus_id.clone(),
                scr: f[0],
                scl: f[1],
                hr: f[2],
                hrv: f[3],
                str_resp: f[4],
                stl: f[5],
                valence: rating_from_unit(label.valence),
                arousal: rating_from_unit(label.arousal),
            });
            truth.push(TruthRow {
                user_id: profile.user_id.clone(),
                stimulus_id,
                valence: p.valence,
                arousal: p.arousal,
                emotion: classify_emotion(p, &fuzzy)?.label,
            });
        }
    }
    Ok(GeneratedDataset { profiles, rows, truth })
}

pub fn write_truth<W: Write>(writer: W, truth: &[TruthRow]) -> Result<(), SimError> {
    let mut wtr = csv::Writer::from_writer(writer);
    for row in truth {
        wtr.serialize(row).map_err(|e| SimError::Io(e.to_string()))?;
    }
    wtr.flush().map_err(|e| SimError::Io(e.to_string()))
}

pub fn read_truth<R: Read>(reader: R) -> Result<Vec<TruthRow>, SimError> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| SimError::Io(format!("truth row {}: {e}", i + 1))))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_rows: usize,
    pub accuracy: f64,
    /// True-label rows, predicted columns, row proportions.
    pub confusion: BTreeMap<Emotion, BTreeMap<Emotion, f64>>,
    pub valence_rmse: f64,
    pub arousal_rmse: f64,
}

/// Scores `model` on the rows at `indices` against ground truth.
pub fn evaluate(
    model: &VaRegressor,
    rows: &[DatasetRow],
    truth: &[TruthRow],
    indices: &[usize],
    mode: CalibrationMode,
) -> Result<EvalReport, SimError> {
    if rows.len() != truth.len() {
        return Err(SimError::Config(format!(
            "dataset has {} rows but truth has {}",
            rows.len(),
            truth.len()
        )));
    }
    if let Some(i) = (0..rows.len()).find(|&i| rows[i].user_id != truth[i].user_id || rows[i].stimulus_id != truth[i].stimulus_id) {
        return Err(SimError::Config(format!("truth row {} does not match dataset row", i + 1)));
    }
    let fuzzy = FuzzyConfig::default();
    let calibrated = calibrate_rows(rows, mode);
    let mut expected = Vec::with_capacity(indices.len());
    let mut predicted = Vec::with_capacity(indices.len());
    let (mut sv, mut sa) = (0.0, 0.0);
    for &i in indices {
        let p = predict_va(model, &calibrated[i].features)?;
        let t = truth[i].point();
        sv += (p.valence - t.valence).powi(2);
        sa += (p.arousal - t.arousal).powi(2);
        expected.push(classify_emotion(t, &fuzzy)?.label);
        predicted.push(classify_emotion(p, &fuzzy)?.label);
    }
    let n = indices.len().max(1) as f64;
    Ok(EvalReport {
        n_rows: indices.len(),
        accuracy: accuracy(&expected, &predicted),
        confusion: confusion_matrix(&expected, &predicted),
        valence_rmse: (sv / n).sqrt(),
        arousal_rmse: (sa / n).sqrt(),
    })
}
