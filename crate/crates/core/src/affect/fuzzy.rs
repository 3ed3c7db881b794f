use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AffectError, Emotion, EmotionState, VaPoint};

/// Quadrant centers and Gaussian width of the fuzzy emotion map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzyConfig {
    pub centers: BTreeMap<Emotion, VaPoint>,
    pub sigma: f64,
}

impl Default for FuzzyConfig {
    fn default() -> Self {
        let centers = BTreeMap::from([
            (Emotion::Bored, VaPoint::new(-0.5, -0.5)),
            (Emotion::Satisfied, VaPoint::new(0.5, -0.5)),
            (Emotion::Curious, VaPoint::new(0.5, 0.5)),
            (Emotion::Confused, VaPoint::new(-0.5, 0.5)),
        ]);
        Self { centers, sigma: 0.35 }
    }
}

impl FuzzyConfig {
    pub fn center(&self, e: Emotion) -> VaPoint {
        self.centers[&e]
    }
}

/// Gaussian memberships around each emotion center, normalized to sum to one.
/// The label is the argmax, ties resolved in [`Emotion::ALL`] order.
pub fn classify_emotion(p: VaPoint, cfg: &FuzzyConfig) -> Result<EmotionState, AffectError> {
    if !p.in_bounds() {
        return Err(AffectError::PointOutOfBounds {
            valence: p.valence,
            arousal: p.arousal,
        });
    }
    let two_s2 = 2.0 * cfg.sigma * cfg.sigma;
    let d2: Vec<(Emotion, f64)> = Emotion::ALL
        .iter()
        .map(|&e| (e, p.dist2(&cfg.center(e))))
        .collect();
    // Shift by the nearest center so the largest term is exactly 1.
    let nearest = d2.iter().map(|&(_, d)| d).fold(f64::INFINITY, f64::min);
    let raw: Vec<(Emotion, f64)> = d2
        .iter()
        .map(|&(e, d)| (e, (-(d - nearest) / two_s2).exp()))
        .collect();
    let total: f64 = raw.iter().map(|&(_, m)| m).sum();

    let mut label = Emotion::Bored;
    let mut best = f64::NEG_INFINITY;
    let mut memberships = BTreeMap::new();
    for (e, m) in raw {
        let m = m / total;
        if m > best {
            best = m;
            label = e;
        }
        memberships.insert(e, m);
    }
    Ok(EmotionState {
        memberships,
        label,
        confidence: best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_centers_take_their_label() {
        let cfg = FuzzyConfig::default();
        let s = classify_emotion(VaPoint::new(0.5, 0.5), &cfg).unwrap();
        assert_eq!(s.label, Emotion::Curious);
        for e in [Emotion::Bored, Emotion::Satisfied, Emotion::Confused] {
            assert!(s.membership(Emotion::Curious) > s.membership(e));
        }
        assert_eq!(
            classify_emotion(VaPoint::new(-0.5, -0.5), &cfg).unwrap().label,
            Emotion::Bored
        );
    }

    #[test]
    fn origin_is_uniform_and_ties_to_bored() {
        let s = classify_emotion(VaPoint::new(0.0, 0.0), &FuzzyConfig::default()).unwrap();
        for e in Emotion::ALL {
            assert!((s.membership(e) - 0.25).abs() < 1e-15);
        }
        assert_eq!(s.label, Emotion::Bored);
        assert_eq!(s.confidence, 0.25);
    }

    #[test]
    fn out_of_bounds_point_is_rejected() {
        assert!(classify_emotion(VaPoint::new(1.2, 0.0), &FuzzyConfig::default()).is_err());
        assert!(classify_emotion(VaPoint::new(f64::NAN, 0.0), &FuzzyConfig::default()).is_err());
    }
}
