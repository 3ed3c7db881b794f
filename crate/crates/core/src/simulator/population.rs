use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::affect::VaPoint;
use crate::features::FeatureName;

pub const DEFAULT_POPULATION_JSON: &str = include_str!("../../config/presets/population_default.json");

/// Generative model of one feature: `base + gain * (valence * v + arousal * a)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureModel {
    pub base_mean: f64,
    pub base_sd: f64,
    pub gain_mean: f64,
    /// Per-user gain multiplier lies in `[gain_min, gain_max]`. One uniform
    /// draw per user is shared by all features.
    pub gain_min: f64,
    pub gain_max: f64,
    pub valence: f64,
    pub arousal: f64,
    /// Lower clamp for generated values.
    pub floor: f64,
}

impl FeatureModel {
    pub fn loading(&self, p: VaPoint) -> f64 {
        self.valence * p.valence + self.arousal * p.arousal
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationPreset {
    pub version: u32,
    pub features: BTreeMap<FeatureName, FeatureModel>,
    /// Feature noise sd as a fraction of the user's gain.
    pub noise: f64,
    /// Sd of self-report noise on the VA labels, in [-1, 1] units.
    pub label_noise: f64,
    /// Sd of ground-truth VA points around their emotion center.
    pub va_spread: f64,
    /// Sd of a user's resting offset in VA units. The offset moves every
    /// baseline along the feature loadings, so at rest one user can look
    /// like another user in a different emotion.
    pub trait_sd: f64,
    /// Beat-to-beat noise of live heart-rate samples, bpm.
    pub hr_sample_sd: f64,
}

/// Physiology of one synthetic user, in [`FeatureName::ALL`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    pub base: [f64; 6],
    pub gain: [f64; 6],
}

impl Default for PopulationPreset {
    fn default() -> Self {
        Self::from_json(DEFAULT_POPULATION_JSON).expect("shipped preset is valid")
    }
}

impl PopulationPreset {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let preset: Self = serde_json::from_str(text).map_err(|e| SimError::Preset(e.to_string()))?;
        preset.validate()?;
        Ok(preset)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Preset(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| SimError::Preset(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for name in FeatureName::ALL {
            let m = self
                .features
                .get(&name)
                .ok_or_else(|| SimError::Preset(format!("missing feature {name}")))?;
            if !(m.base_sd >= 0.0 && m.gain_min >= 0.0 && m.gain_min <= m.gain_max && m.gain_mean >= 0.0) {
                return Err(SimError::Preset(format!("feature {name}: invalid spread or gain bounds")));
            }
        }
        let scales = [self.noise, self.label_noise, self.va_spread, self.trait_sd, self.hr_sample_sd];
        if scales.iter().any(|&s| !(s >= 0.0)) {
            return Err(SimError::Preset("noise scales must be non-negative".into()));
        }
        let no_gain = self.features.values().all(|m| m.gain_mean * m.gain_max == 0.0);
        if no_gain && self.noise == 0.0 {
            return Err(SimError::Degenerate);
        }
        Ok(())
    }

    pub fn model(&self, name: FeatureName) -> &FeatureModel {
        &self.features[&name]
    }

    /// Draws baselines and gains for a new user.
    pub fn sample_profile<R: Rng>(&self, user_id: impl Into<String>, rng: &mut R) -> UserProfile {
        let mut base = [0.0; 6];
        let mut gain = [0.0; 6];
        let offset = VaPoint::new(self.trait_sd * clipped_normal(rng), self.trait_sd * clipped_normal(rng));
        let u: f64 = rng.random();
        for name in FeatureName::ALL {
            let m = self.model(name);
            let i = name.index();
            base[i] = m.base_mean + m.base_sd * clipped_normal(rng) + m.gain_mean * m.loading(offset);
            gain[i] = m.gain_mean * (m.gain_min + u * (m.gain_max - m.gain_min));
        }
        UserProfile {
            user_id: user_id.into(),
            base,
            gain,
        }
    }

    /// Noise-free feature vector of `profile` at `p`.
    pub fn mean_features(&self, profile: &UserProfile, p: VaPoint) -> [f64; 6] {
        let mut out = [0.0; 6];
        for name in FeatureName::ALL {
            let i = name.index();
            let m = self.model(name);
            out[i] = (profile.base[i] + profile.gain[i] * m.loading(p)).max(m.floor);
        }
        out
    }

    /// Feature vector of `profile` at `p` with per-feature Gaussian noise.
    pub fn noisy_features<R: Rng>(&self, profile: &UserProfile, p: VaPoint, rng: &mut R) -> [f64; 6] {
        let mut out = [0.0; 6];
        for name in FeatureName::ALL {
            let i = name.index();
            let m = self.model(name);
            let noise = gaussian(rng, self.noise * profile.gain[i]);
            out[i] = (profile.base[i] + profile.gain[i] * m.loading(p) + noise).max(m.floor);
        }
        out
    }
}

fn clipped_normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample::<f64, _>(rand_distr::StandardNormal).clamp(-3.0, 3.0)
}

/// One draw from `N(0, sd^2)`; zero when `sd` is zero.
pub(crate) fn gaussian<R: Rng>(rng: &mut R, sd: f64) -> f64 {
    if sd > 0.0 {
        Normal::new(0.0, sd).expect("positive sd").sample(rng)
    } else {
        0.0
    }
}
