use classpulse_core::affect::write_dataset;
use classpulse_core::calibration::{CalibrationConfig, CalibrationState, OutputRange};
use classpulse_core::features::FeatureName;
use classpulse_core::simulator::{
    generate_dataset, run_closed_loop, write_truth, DynamicsPreset, GenerationConfig, PopulationPreset, ScenarioConfig,
    SimError,
};
use classpulse_core::VaPoint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two-sample Kolmogorov-Smirnov distance.
fn ks(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

#[test]
fn ks_helper_sanity() {
    assert_eq!(ks(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 0.0);
    assert_eq!(ks(&[1.0, 2.0], &[3.0, 4.0]), 1.0);
    assert!((ks(&[1.0, 2.0, 3.0, 4.0], &[3.0, 4.0, 5.0, 6.0]) - 0.5).abs() < 1e-12);
}

#[test]
fn calibration_aligns_users_with_different_baselines() {
    let preset = PopulationPreset::default();
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let hr = FeatureName::Hr.index();
    let mut users = Vec::new();
    for (base, gain_factor) in [(60.0, 1.0), (90.0, 1.5)] {
        let mut p = preset.sample_profile(format!("hr{base}"), &mut rng);
        p.base[hr] = base;
        p.gain.iter_mut().for_each(|g| *g *= gain_factor);
        users.push(p);
    }

    let n = 1000;
    let mut raw: Vec<Vec<f64>> = vec![Vec::new(); 2];
    let mut calibrated: Vec<Vec<f64>> = vec![Vec::new(); 2];
    for (u, profile) in users.iter().enumerate() {
        let rows: Vec<[f64; 6]> = (0..n)
            .map(|_| {
                let p = VaPoint::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                preset.noisy_features(profile, p, &mut rng)
            })
            .collect();
        let mut state = CalibrationState::new(CalibrationConfig {
            min_samples: 1,
            warmup_samples: None,
            output_range: OutputRange::UnitInterval,
        });
        for r in &rows {
            state.update_values("u", r);
        }
        for r in &rows {
            raw[u].push(r[hr]);
            calibrated[u].push(state.normalize_values("u", r).unwrap().values[hr]);
        }
    }
    let raw_d = ks(&raw[0], &raw[1]);
    let cal_d = ks(&calibrated[0], &calibrated[1]);
    assert!(raw_d > 0.5, "raw KS {raw_d}");
    assert!(cal_d < 0.1, "calibrated KS {cal_d}");
}

fn render(cfg: &GenerationConfig) -> (Vec<u8>, Vec<u8>) {
    let ds = generate_dataset(&PopulationPreset::default(), cfg).unwrap();
    let mut rows = Vec::new();
    let mut truth = Vec::new();
    write_dataset(&mut rows, &ds.rows).unwrap();
    write_truth(&mut truth, &ds.truth).unwrap();
    (rows, truth)
}

#[test]
fn seeded_generation_is_byte_identical() {
    let cfg = GenerationConfig::new(3, 40, 9);
    assert_eq!(render(&cfg), render(&cfg));
    assert_ne!(render(&cfg).0, render(&GenerationConfig::new(3, 40, 10)).0);
}

#[test]
fn noise_free_fixed_point_gives_identical_rows_per_user() {
    let mut preset = PopulationPreset::default();
    preset.noise = 0.0;
    preset.label_noise = 0.0;
    preset.va_spread = 0.0;
    let mut cfg = GenerationConfig::new(2, 30, 1);
    cfg.emotions = vec![classpulse_core::Emotion::Curious];
    let ds = generate_dataset(&preset, &cfg).unwrap();
    for user in ["u00", "u01"] {
        let rows: Vec<_> = ds.rows.iter().filter(|r| r.user_id == user).collect();
        assert_eq!(rows.len(), 30);
        assert!(rows.iter().all(|r| r.features() == rows[0].features()));
    }
}

#[test]
fn too_few_users_is_rejected() {
    assert!(matches!(
        generate_dataset(&PopulationPreset::default(), &GenerationConfig::new(1, 10, 0)),
        Err(SimError::Config(_))
    ));
}

#[test]
fn closed_loop_is_deterministic() {
    let cfg = ScenarioConfig::new(4, 3.0, true, 5, DynamicsPreset::decay_to_bored());
    let a = run_closed_loop(&cfg, None).unwrap();
    let b = run_closed_loop(&cfg, None).unwrap();
    assert_eq!(a.report, b.report);
    assert_eq!(a.transitions, b.transitions);
    let strip = |o: &classpulse_core::simulator::ClosedLoopOutcome| {
        o.events
            .iter()
            .map(|e| {
                let mut v = serde_json::to_value(e).unwrap();
                v.as_object_mut().unwrap().remove("latency_ms");
                v
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn thirty_minute_session_covers_every_student() {
    let cfg = ScenarioConfig::new(10, 30.0, true, 1, DynamicsPreset::decay_to_bored());
    let out = run_closed_loop(&cfg, None).unwrap();
    let m = &out.report.metrics;
    let tick = cfg.engine.tick_period_ms as u64;
    assert_eq!(m.dwell_ms.len(), 10);
    for student in m.dwell_ms.keys() {
        let observed = m.observed_time_ms(student);
        assert!(observed.abs_diff(30 * 60_000) <= tick, "{student}: {observed} ms");
    }
    assert!(out.report.suggestions > 0);
    assert!(m.decision_latency_ms.is_empty());
    assert_eq!(out.latency_ms.len() as u64, out.report.ticks);
}
