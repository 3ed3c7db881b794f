use serde::{Deserialize, Serialize};

use super::dataset::{CalibrationMode, LabeledRow, Split, SplitRatios};
use super::svr::{self, SvrModel, SvrParams};
use super::{rating_from_unit, AffectError, VaPoint};

/// Tag of the input space the regressor was trained on.
pub const FEATURE_SPACE_VERSION: &str = "minmax-unit-v1";

pub const MIN_TRAINING_ROWS: usize = 30;

/// Kernel scale of the "fine" Gaussian preset for six predictors.
pub fn fine_kernel_scale(dims: usize) -> f64 {
    (dims as f64).sqrt() / 4.0
}

/// Fixed values bypass the grid search for that parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub kernel_scale: Option<f64>,
    pub c: Option<f64>,
    pub epsilon: f64,
    pub tol: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            kernel_scale: None,
            c: None,
            epsilon: 0.1,
            tol: 1e-4,
        }
    }
}

impl HyperParams {
    fn scale_grid(&self, dims: usize) -> Vec<f64> {
        match self.kernel_scale {
            Some(s) => vec![s],
            None => {
                let center = fine_kernel_scale(dims);
                vec![center / 2.0, center, center * 2.0]
            }
        }
    }

    fn c_grid(&self) -> Vec<f64> {
        match self.c {
            Some(c) => vec![c],
            None => vec![1.0, 10.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub ratios: SplitRatios,
    pub n_rows: usize,
    /// How the training rows were calibrated; evaluation must match.
    #[serde(default)]
    pub calibration: CalibrationMode,
}

/// Two independent regressions, one per affect axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaRegressor {
    pub version: String,
    pub valence: Option<SvrModel>,
    pub arousal: Option<SvrModel>,
    #[serde(default)]
    pub training: Option<TrainingMeta>,
}

impl VaRegressor {
    pub fn untrained() -> Self {
        Self {
            version: FEATURE_SPACE_VERSION.into(),
            valence: None,
            arousal: None,
            training: None,
        }
    }

    pub fn is_trained(&self) -> bool {
        self.valence.is_some() && self.arousal.is_some()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, AffectError> {
        let model: Self =
            serde_json::from_str(text).map_err(|e| AffectError::Dataset(format!("model file: {e}")))?;
        if model.version != FEATURE_SPACE_VERSION {
            return Err(AffectError::Dataset(format!(
                "model file: feature space `{}` is not `{FEATURE_SPACE_VERSION}`",
                model.version
            )));
        }
        Ok(model)
    }

    /// The split used at training time, if it applies to a dataset of
    /// `n_rows` rows.
    pub fn split_for(&self, n_rows: usize) -> Option<Split> {
        self.training
            .filter(|t| t.n_rows == n_rows)
            .map(|t| Split::new(n_rows, t.ratios, t.seed))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetReport {
    pub kernel_scale: f64,
    pub c: f64,
    pub epsilon: f64,
    pub n_support: usize,
    pub train_rmse: f64,
    pub validation_rmse: f64,
    pub test_rmse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
    pub valence: TargetReport,
    pub arousal: TargetReport,
}

fn rmse(model: &SvrModel, rows: &[Vec<f64>], targets: &[f64]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let ss: f64 = rows
        .iter()
        .zip(targets)
        .map(|(r, t)| {
            let e = model.predict(r).clamp(-1.0, 1.0) - t;
            e * e
        })
        .sum();
    (ss / rows.len() as f64).sqrt()
}

fn validate_rows(rows: &[LabeledRow]) -> Result<usize, AffectError> {
    if rows.len() < MIN_TRAINING_ROWS {
        return Err(AffectError::TooFewRows(rows.len(), MIN_TRAINING_ROWS));
    }
    let dims = rows[0].features.len();
    for (i, row) in rows.iter().enumerate() {
        if row.features.len() != dims {
            return Err(AffectError::Dimension {
                expected: dims,
                got: row.features.len(),
            });
        }
        for (field, v) in [("valence", row.valence), ("arousal", row.arousal)] {
            let rating = rating_from_unit(v);
            if !v.is_finite() {
                return Err(AffectError::NonFiniteLabel { row: i, field, value: v });
            }
            if !(-1.0..=1.0).contains(&v) {
                return Err(AffectError::LabelOutOfRange {
                    row: i,
                    field,
                    value: rating,
                });
            }
        }
        if let Some((index, &value)) = row
            .features
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || !(0.0..=1.0).contains(*v))
        {
            return Err(AffectError::FeatureOutOfRange { index, value });
        }
    }
    Ok(dims)
}

struct Candidate {
    model: SvrModel,
    validation_rmse: f64,
}

/// Trains valence and arousal regressors on calibrated rows.
///
/// Rows are shuffled with `seed` and split by `ratios`. For each axis, the
/// kernel scale and C with the lowest validation RMSE are kept.
pub fn train_regressor(
    rows: &[LabeledRow],
    ratios: SplitRatios,
    hyper: &HyperParams,
    seed: u64,
) -> Result<(VaRegressor, TrainingReport), AffectError> {
    let dims = validate_rows(rows)?;
    let split = Split::new(rows.len(), ratios, seed);
    if split.train.is_empty() {
        return Err(AffectError::Split("empty training partition".into()));
    }
    let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
        let x = idx.iter().map(|&i| rows[i].features.clone()).collect();
        let v = idx.iter().map(|&i| rows[i].valence).collect();
        let a = idx.iter().map(|&i| rows[i].arousal).collect();
        (x, v, a)
    };
    let (x_tr, v_tr, a_tr) = pick(&split.train);
    let (x_va, v_va, a_va) = pick(&split.validation);
    let (x_te, v_te, a_te) = pick(&split.test);

    let mut best: [Option<Candidate>; 2] = [None, None];
    for scale in hyper.scale_grid(dims) {
        let gram = svr::gram_matrix(&x_tr, scale);
        for c in hyper.c_grid() {
            let params = SvrParams {
                kernel_scale: scale,
                c,
                epsilon: hyper.epsilon,
                tol: hyper.tol,
                ..SvrParams::default()
            };
            for (slot, (y_tr, y_va)) in [(&v_tr, &v_va), (&a_tr, &a_va)].into_iter().enumerate() {
                let model = svr::fit_with_gram(&x_tr, y_tr, &gram, &params).model;
                let validation_rmse = if x_va.is_empty() {
                    rmse(&model, &x_tr, y_tr)
                } else {
                    rmse(&model, &x_va, y_va)
                };
                if best[slot]
                    .as_ref()
                    .is_none_or(|b| validation_rmse < b.validation_rmse)
                {
                    best[slot] = Some(Candidate { model, validation_rmse });
                }
            }
        }
    }
    let [Some(valence), Some(arousal)] = best else {
        unreachable!("grids are never empty");
    };

    let report_for = |cand: &Candidate, y_tr: &[f64], y_te: &[f64]| TargetReport {
        kernel_scale: cand.model.kernel_scale,
        c: cand.model.c,
        epsilon: cand.model.epsilon,
        n_support: cand.model.n_support(),
        train_rmse: rmse(&cand.model, &x_tr, y_tr),
        validation_rmse: cand.validation_rmse,
        test_rmse: rmse(&cand.model, &x_te, y_te),
    };
    let report = TrainingReport {
        n_train: split.train.len(),
        n_validation: split.validation.len(),
        n_test: split.test.len(),
        valence: report_for(&valence, &v_tr, &v_te),
        arousal: report_for(&arousal, &a_tr, &a_te),
    };
    let model = VaRegressor {
        version: FEATURE_SPACE_VERSION.into(),
        valence: Some(valence.model),
        arousal: Some(arousal.model),
        training: Some(TrainingMeta {
            seed,
            ratios,
            n_rows: rows.len(),
            calibration: CalibrationMode::PerUser,
        }),
    };
    Ok((model, report))
}

/// Predicts a clamped valence/arousal point for one calibrated vector.
pub fn predict_va(model: &VaRegressor, x: &[f64]) -> Result<VaPoint, AffectError> {
    let (Some(v), Some(a)) = (&model.valence, &model.arousal) else {
        return Err(AffectError::Untrained("no fitted regressors".into()));
    };
    let dims = v.support_vectors.first().map_or(x.len(), Vec::len);
    if x.len() != dims {
        return Err(AffectError::Dimension {
            expected: dims,
            got: x.len(),
        });
    }
    if let Some((index, &value)) = x
        .iter()
        .enumerate()
        .find(|(_, v)| !v.is_finite() || !(0.0..=1.0).contains(*v))
    {
        return Err(AffectError::FeatureOutOfRange { index, value });
    }
    Ok(VaPoint::clamped(v.predict(x), a.predict(x)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_rows(n: usize, f: impl Fn(&[f64]) -> (f64, f64)) -> Vec<LabeledRow> {
        (0..n)
            .map(|i| {
                let x: Vec<f64> = (0..6).map(|d| ((i * (d + 3) + d) % 17) as f64 / 16.0).collect();
                let (valence, arousal) = f(&x);
                LabeledRow { features: x, valence, arousal }
            })
            .collect()
    }

    #[test]
    fn too_few_rows() {
        let rows = grid_rows(10, |_| (0.0, 0.0));
        assert_eq!(
            train_regressor(&rows, SplitRatios::default(), &HyperParams::default(), 0).unwrap_err(),
            AffectError::TooFewRows(10, 30)
        );
    }

    #[test]
    fn labels_are_validated() {
        let mut rows = grid_rows(40, |_| (0.0, 0.0));
        rows[3].arousal = f64::NAN;
        assert!(matches!(
            train_regressor(&rows, SplitRatios::default(), &HyperParams::default(), 0),
            Err(AffectError::NonFiniteLabel { row: 3, field: "arousal", .. })
        ));
        rows[3].arousal = 1.5; // rating 11
        assert!(matches!(
            train_regressor(&rows, SplitRatios::default(), &HyperParams::default(), 0),
            Err(AffectError::LabelOutOfRange { row: 3, .. })
        ));
    }

    #[test]
    fn constant_targets_predict_zero() {
        let rows = grid_rows(60, |_| (0.0, 0.0));
        let (model, report) = train_regressor(&rows, SplitRatios::default(), &HyperParams::default(), 1).unwrap();
        assert!(report.valence.test_rmse <= 0.1);
        let p = predict_va(&model, &rows[0].features).unwrap();
        assert_eq!((p.valence, p.arousal), (0.0, 0.0));
    }

    #[test]
    fn prediction_preconditions() {
        let rows = grid_rows(60, |x| (x[0] - 0.5, x[1] - 0.5));
        let (model, _) = train_regressor(&rows, SplitRatios::default(), &HyperParams::default(), 1).unwrap();
        let x = vec![0.2, 0.4, 0.6, 1.7, 0.0, 0.1];
        assert_eq!(
            predict_va(&model, &x).unwrap_err(),
            AffectError::FeatureOutOfRange { index: 3, value: 1.7 }
        );
        assert!(matches!(predict_va(&model, &[0.5; 5]), Err(AffectError::Dimension { .. })));
        assert!(matches!(
            predict_va(&VaRegressor::untrained(), &[0.5; 6]),
            Err(AffectError::Untrained(_))
        ));
        let y = vec![0.2, 0.4, 0.6, 0.7, 0.0, 0.1];
        assert_eq!(predict_va(&model, &y).unwrap(), predict_va(&model, &y).unwrap());
    }

    #[test]
    fn model_json_is_lossless() {
        let rows = grid_rows(60, |x| (x[0] - 0.5, x[2] - 0.5));
        let (model, _) = train_regressor(&rows, SplitRatios::default(), &HyperParams::default(), 2).unwrap();
        let back = VaRegressor::from_json(&model.to_json()).unwrap();
        assert_eq!(back, model);
    }
}
