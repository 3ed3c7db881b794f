use classpulse_core::affect::svr::{fit, gaussian_kernel, SvrParams};
use classpulse_core::affect::{classify_emotion, FuzzyConfig};
use classpulse_core::engine::aggregate;
use classpulse_core::{Emotion, VaPoint};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest violation of the epsilon-SVR optimality conditions, computed from
/// the dual coefficients alone.
fn kkt_violation(rows: &[Vec<f64>], y: &[f64], beta: &[f64], bias: f64, p: &SvrParams) -> f64 {
    let bound = 1e-8 * p.c;
    let mut worst: f64 = 0.0;
    for i in 0..rows.len() {
        let f: f64 = rows
            .iter()
            .zip(beta)
            .map(|(r, b)| b * gaussian_kernel(r, &rows[i], p.kernel_scale))
            .sum::<f64>()
            + bias;
        let resid = y[i] - f;
        let b = beta[i];
        let v = if b.abs() <= bound {
            // Inside the tube.
            (resid.abs() - p.epsilon).max(0.0)
        } else if b.abs() >= p.c - bound {
            // At the box: on or outside the tube, on the matching side.
            (p.epsilon - resid * b.signum()).max(0.0)
        } else {
            // Free: exactly on the tube boundary.
            (resid - p.epsilon * b.signum()).abs()
        };
        worst = worst.max(v);
    }
    worst
}

fn random_problem(rng: &mut ChaCha8Rng, n: usize, dims: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let w: Vec<f64> = (0..dims).map(|_| rng.random_range(-1.0..1.0)).collect();
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..dims).map(|_| rng.random::<f64>()).collect()).collect();
    let y = rows
        .iter()
        .map(|r| {
            let lin: f64 = r.iter().zip(&w).map(|(x, w)| x * w).sum();
            (3.0 * lin).sin() * 0.8 + rng.random_range(-0.2..0.2)
        })
        .collect();
    (rows, y)
}

#[test]
fn smo_solutions_satisfy_kkt() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for case in 0..30 {
        let n = rng.random_range(30..200);
        let (rows, y) = random_problem(&mut rng, n, 6);
        let params = SvrParams {
            kernel_scale: [0.306, 0.612, 1.224][case % 3],
            c: [1.0, 10.0][case % 2],
            ..SvrParams::default()
        };
        let fit = fit(&rows, &y, &params);
        assert!(fit.model.converged, "case {case}");
        let sum: f64 = fit.dual.iter().sum();
        assert!(sum.abs() < 1e-9, "case {case}: sum of duals {sum}");
        assert!(fit.dual.iter().all(|b| b.abs() <= params.c + 1e-12));
        let v = kkt_violation(&rows, &y, &fit.dual, fit.model.bias, &params);
        assert!(v <= 1e-3, "case {case}: KKT violation {v}");
    }
}

#[test]
fn quadrant_centers_classify_as_themselves() {
    let cfg = FuzzyConfig::default();
    for e in Emotion::ALL {
        assert_eq!(classify_emotion(cfg.center(e), &cfg).unwrap().label, e);
    }
    assert!(classify_emotion(VaPoint::new(1.2, 0.0), &cfg).is_err());
}

fn arb_point() -> impl Strategy<Value = VaPoint> {
    (-1.0f64..=1.0, -1.0f64..=1.0).prop_map(|(v, a)| VaPoint::new(v, a))
}

fn quadrant(p: VaPoint) -> Emotion {
    match (p.valence > 0.0, p.arousal > 0.0) {
        (false, false) => Emotion::Bored,
        (true, false) => Emotion::Satisfied,
        (true, true) => Emotion::Curious,
        (false, true) => Emotion::Confused,
    }
}

fn arb_class() -> impl Strategy<Value = Vec<(String, VaPoint, f64)>> {
    prop::collection::vec((arb_point(), 0.1f64..10.0), 1..40).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (p, w))| (format!("s{i:02}"), p, w))
            .collect()
    })
}

proptest! {
    #[test]
    fn memberships_form_a_distribution(p in arb_point()) {
        let state = classify_emotion(p, &FuzzyConfig::default()).unwrap();
        let total: f64 = Emotion::ALL.iter().map(|&e| state.membership(e)).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        for e in Emotion::ALL {
            let m = state.membership(e);
            prop_assert!(m > 0.0 && m < 1.0);
        }
        let best = Emotion::ALL.iter().map(|&e| state.membership(e)).fold(0.0, f64::max);
        prop_assert_eq!(state.membership(state.label), best);
    }

    #[test]
    fn clear_quadrant_points_get_their_quadrant(
        v in 0.0f64..=1.0, a in 0.0f64..=1.0, sv in prop::bool::ANY, sa in prop::bool::ANY,
    ) {
        prop_assume!(v.max(a) >= 0.3 && v > 0.0 && a > 0.0);
        let p = VaPoint::new(if sv { v } else { -v }, if sa { a } else { -a });
        prop_assert_eq!(classify_emotion(p, &FuzzyConfig::default()).unwrap().label, quadrant(p));
    }

    #[test]
    fn aggregate_ignores_student_order(class in arb_class(), seed in any::<u64>()) {
        let cfg = FuzzyConfig::default();
        let mut shuffled = class.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        let a = aggregate(&class, &cfg).unwrap();
        let b = aggregate(&shuffled, &cfg).unwrap();
        prop_assert!((a.centroid.valence - b.centroid.valence).abs() < 1e-12);
        prop_assert!((a.centroid.arousal - b.centroid.arousal).abs() < 1e-12);
        prop_assert_eq!(a.collective.label, b.collective.label);
        prop_assert_eq!(a.counts, b.counts);
    }

    #[test]
    fn aggregate_is_homogeneous_in_weights(class in arb_class(), k in -8i32..8) {
        // Power-of-two scaling is exact in floating point.
        let c = 2f64.powi(k);
        let cfg = FuzzyConfig::default();
        let scaled: Vec<_> = class.iter().map(|(id, p, w)| (id.clone(), *p, w * c)).collect();
        let a = aggregate(&class, &cfg).unwrap();
        let b = aggregate(&scaled, &cfg).unwrap();
        prop_assert_eq!(a.centroid, b.centroid);
        prop_assert_eq!(a.collective.label, b.collective.label);
        prop_assert_eq!(a.counts, b.counts);
    }

    #[test]
    fn single_student_sets_the_class_label(p in arb_point(), w in 0.1f64..10.0) {
        let cfg = FuzzyConfig::default();
        let c = aggregate(&[("s".to_string(), p, w)], &cfg).unwrap();
        prop_assert_eq!(c.collective.label, classify_emotion(p, &cfg).unwrap().label);
    }
}
