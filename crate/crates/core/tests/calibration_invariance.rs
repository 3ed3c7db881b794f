use classpulse_core::calibration::{CalibrationConfig, CalibrationState};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn calibrate(rows: &[[f64; 6]]) -> CalibrationState {
    let mut state = CalibrationState::new(CalibrationConfig::default());
    for r in rows {
        state.update_values("s", r);
    }
    state
}

#[test]
fn affine_distortion_leaves_calibrated_vectors_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let n = rng.random_range(50..400);
        let center: [f64; 6] = [1.2, 8.0, 75.0, 70.0, 0.15, 33.0];
        let raw: Vec<[f64; 6]> = (0..n)
            .map(|_| center.map(|c| c * (1.0 + rng.random_range(-0.3..0.3))))
            .collect();
        let alpha: [f64; 6] = std::array::from_fn(|_| rng.random_range(0.5..=2.0));
        let beta: [f64; 6] = std::array::from_fn(|_| rng.random_range(-10.0..=10.0));
        let distorted: Vec<[f64; 6]> = raw
            .iter()
            .map(|r| std::array::from_fn(|i| alpha[i] * r[i] + beta[i]))
            .collect();

        let plain = calibrate(&raw);
        let bent = calibrate(&distorted);
        // Score every sample seen during calibration and some unseen ones.
        let probes = raw.iter().zip(&distorted).map(|(r, d)| (*r, *d)).chain((0..50).map(|_| {
            let r = center.map(|c| c * (1.0 + rng.random_range(-0.5..0.5)));
            (r, std::array::from_fn(|i| alpha[i] * r[i] + beta[i]))
        }));
        for (r, d) in probes {
            let a = plain.normalize_values("s", &r).unwrap();
            let b = bent.normalize_values("s", &d).unwrap();
            for i in 0..6 {
                let e = (a.values[i] - b.values[i]).abs();
                worst = worst.max(e);
                assert!(e <= 1e-12, "case {case}, feature {i}: {} vs {}", a.values[i], b.values[i]);
            }
        }
    }
    eprintln!("worst absolute difference {worst:e}");
}

#[test]
fn normalize_requires_calibration() {
    let mut state = CalibrationState::default();
    assert!(state.normalize_values("s", &[1.0; 6]).is_err());
    for i in 0..49 {
        state.update_values("s", &[i as f64; 6]);
    }
    assert!(state.normalize_values("s", &[1.0; 6]).is_err());
    state.update_values("s", &[49.0; 6]);
    assert!(state.normalize_values("s", &[1.0; 6]).is_ok());
}

proptest! {
    #[test]
    fn normalize_is_monotone_and_bounded(
        rows in prop::collection::vec(prop::array::uniform6(-100.0f64..100.0), 50..120),
        a in prop::array::uniform6(-200.0f64..200.0),
        b in prop::array::uniform6(-200.0f64..200.0),
    ) {
        let state = calibrate(&rows);
        let lo: [f64; 6] = std::array::from_fn(|i| a[i].min(b[i]));
        let hi: [f64; 6] = std::array::from_fn(|i| a[i].max(b[i]));
        let nl = state.normalize_values("s", &lo).unwrap();
        let nh = state.normalize_values("s", &hi).unwrap();
        for i in 0..6 {
            prop_assert!((0.0..=1.0).contains(&nl.values[i]));
            prop_assert!((0.0..=1.0).contains(&nh.values[i]));
            prop_assert!(nl.values[i] <= nh.values[i]);
        }
    }

    #[test]
    fn extrema_map_to_endpoints(rows in prop::collection::vec(prop::array::uniform6(-100.0f64..100.0), 50..120)) {
        let state = calibrate(&rows);
        let min: [f64; 6] = std::array::from_fn(|i| rows.iter().map(|r| r[i]).fold(f64::INFINITY, f64::min));
        let max: [f64; 6] = std::array::from_fn(|i| rows.iter().map(|r| r[i]).fold(f64::NEG_INFINITY, f64::max));
        prop_assert_eq!(state.normalize_values("s", &min).unwrap().values, [0.0; 6]);
        prop_assert_eq!(state.normalize_values("s", &max).unwrap().values, [1.0; 6]);
    }

    #[test]
    fn extrema_move_monotonically(rows in prop::collection::vec(prop::array::uniform6(-100.0f64..100.0), 1..300)) {
        let mut state = CalibrationState::default();
        let mut prev: Option<[(f64, f64); 6]> = None;
        for r in &rows {
            state.update_values("s", r);
            let now: [(f64, f64); 6] = std::array::from_fn(|i| {
                let e = state.extrema("s", classpulse_core::features::FeatureName::ALL[i]).unwrap();
                (e.f_min, e.f_max)
            });
            if let Some(p) = prev {
                for i in 0..6 {
                    prop_assert!(now[i].0 <= p[i].0 && now[i].1 >= p[i].1);
                    prop_assert!(now[i].0 <= now[i].1);
                }
            }
            prev = Some(now);
        }
    }
}
