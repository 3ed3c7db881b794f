use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{generate_dataset, GenerationConfig};
use super::population::PopulationPreset;
use super::student::{sample_emotion, step_student, DynamicsPreset, SyntheticStudent};
use super::SimError;
use crate::affect::{calibrate_rows, train_regressor, CalibrationMode, Emotion, HyperParams, SplitRatios, VaRegressor};
use crate::engine::{ActionSource, EngineConfig, EventEnvelope, RosterEntry, Session, SessionEvent, SessionMetrics};
use crate::mdp::{solve, Action, MdpConfig, TransitionLog};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub students: usize,
    /// Live session length after calibration.
    pub minutes: f64,
    pub controller: bool,
    pub seed: u64,
    pub dynamics: DynamicsPreset,
    pub population: PopulationPreset,
    pub mdp: MdpConfig,
    pub engine: EngineConfig,
    /// Seconds spent in each emotion during calibration.
    pub calibration_block_s: f64,
    /// Size of the generated training set when no model is supplied.
    pub training_users: usize,
    pub training_rows_per_user: usize,
}

impl ScenarioConfig {
    pub fn new(students: usize, minutes: f64, controller: bool, seed: u64, dynamics: DynamicsPreset) -> Self {
        Self {
            students,
            minutes,
            controller,
            seed,
            dynamics,
            population: PopulationPreset::default(),
            mdp: MdpConfig::default_config(),
            engine: EngineConfig::default(),
            calibration_block_s: 75.0,
            training_users: 6,
            training_rows_per_user: 100,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.students == 0 {
            return Err(SimError::Config("students must be positive".into()));
        }
        if !(self.minutes > 0.0) || !(self.calibration_block_s > 0.0) {
            return Err(SimError::Config("minutes and calibration_block_s must be positive".into()));
        }
        if self.training_users < 2 || self.training_rows_per_user == 0 {
            return Err(SimError::Config("training set needs at least 2 users and 1 row each".into()));
        }
        self.dynamics.validate()?;
        self.population.validate()
    }
}

/// Deterministic summary of one simulated session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub students: usize,
    pub minutes: f64,
    pub controller: bool,
    pub seed: u64,
    pub preset: String,
    /// Session metrics without wall-clock latency samples.
    pub metrics: SessionMetrics,
    /// Mean over students of the fraction of labelled time per emotion.
    pub dwell_fractions: BTreeMap<Emotion, f64>,
    pub collective_dwell_fractions: BTreeMap<Emotion, f64>,
    /// Fraction of student-seconds spent in each latent emotion.
    pub latent_dwell_fractions: BTreeMap<Emotion, f64>,
    pub suggestions: u64,
    pub ticks: u64,
    pub actions_applied: BTreeMap<Action, u64>,
}

#[derive(Debug, Clone)]
pub struct ClosedLoopOutcome {
    pub report: SimulationReport,
    pub events: Vec<EventEnvelope>,
    pub transitions: TransitionLog,
    /// Wall-clock duration of every tick, ms.
    pub latency_ms: Vec<f64>,
}

/// Regressor trained on a generated dataset with fixed hyperparameters.
pub fn train_scenario_regressor(cfg: &ScenarioConfig, seed: u64) -> Result<VaRegressor, SimError> {
    let ds = generate_dataset(
        &cfg.population,
        &GenerationConfig::new(cfg.training_users, cfg.training_rows_per_user, seed),
    )?;
    let rows = calibrate_rows(&ds.rows, CalibrationMode::PerUser);
    let hyper = HyperParams {
        kernel_scale: Some(crate::affect::fine_kernel_scale(6)),
        c: Some(1.0),
        ..HyperParams::default()
    };
    let (model, _) = train_regressor(&rows, SplitRatios::default(), &hyper, seed)?;
    Ok(model)
}

/// Simulates a full session: calibration, go-live, and `minutes` of live
/// teaching. With the controller on, the teacher applies every suggestion
/// and keeps it in effect until the next one; with it off the class stays
/// at `no_change`.
pub fn run_closed_loop(cfg: &ScenarioConfig, model: Option<Arc<VaRegressor>>) -> Result<ClosedLoopOutcome, SimError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let training_seed = rng.next_u64();
    let model = match model {
        Some(m) => m,
        None => Arc::new(train_scenario_regressor(cfg, training_seed)?),
    };
    let policy = solve(&cfg.mdp.to_model()?, &cfg.mdp.value_iteration)?;

    let period_s = cfg.dynamics.latent_period_s;
    let mut students: Vec<SyntheticStudent> = (0..cfg.students)
        .map(|i| {
            let profile = cfg.population.sample_profile(format!("s{i:02}"), &mut rng);
            SyntheticStudent::new(profile, Emotion::Bored, 0, period_s, rng.next_u64())
        })
        .collect();
    let roster = students.iter().map(|s| RosterEntry::new(s.id())).collect();
    let mut session = Session::new(format!("sim-{}", cfg.seed), cfg.engine.clone(), roster, model, &policy, 0)?;

    // Calibration: every student visits all four emotions in a random order.
    let orders: Vec<Vec<Emotion>> = students
        .iter_mut()
        .map(|st| {
            let mut order = Emotion::ALL.to_vec();
            order.shuffle(st.rng());
            order
        })
        .collect();
    let block_ms = (cfg.calibration_block_s * 1000.0).round() as i64;
    for block in 0..Emotion::ALL.len() {
        for (st, order) in students.iter_mut().zip(&orders) {
            st.set_latent(order[block], &cfg.population, block as i64 * block_ms);
        }
        for _ in 0..(block_ms / 1000) {
            for st in students.iter_mut() {
                for s in st.hold(&cfg.population, 1.0) {
                    session.ingest_sample(&s)?;
                }
            }
        }
    }
    let live_start = Emotion::ALL.len() as i64 * block_ms;
    session.go_live(session.clock_ms().unwrap_or(0))?;

    let period_ms = (period_s * 1000.0).round() as i64;
    for st in students.iter_mut() {
        let e = sample_emotion(&cfg.dynamics.initial, st.rng());
        let phase = st.rng().random_range(0..period_ms);
        st.set_latent(e, &cfg.population, live_start - phase);
    }

    let live_s = (cfg.minutes * 60.0).round() as i64;
    let mut action = Action::NoChange;
    let mut latent_ms: BTreeMap<Emotion, u64> = Emotion::ALL.iter().map(|&e| (e, 0)).collect();
    let mut actions_applied: BTreeMap<Action, u64> = BTreeMap::new();
    session.take_new_events();
    for second in 0..live_s {
        let now = live_start + second * 1000;
        for st in students.iter_mut() {
            for s in step_student(st, &cfg.population, &cfg.dynamics, action, 1.0)? {
                session.ingest_sample(&s)?;
            }
            *latent_ms.get_mut(&st.latent).expect("all emotions present") += 1000;
        }
        for env in session.take_new_events() {
            if let (true, SessionEvent::Suggestion(s)) = (cfg.controller, &env.event) {
                action = s.action;
                *actions_applied.entry(action).or_default() += 1;
                session.apply_action(action, ActionSource::Applied, now)?;
            }
        }
    }
    session.end(live_start + live_s * 1000)?;

    let metrics = session.metrics().clone();
    let total_latent: u64 = latent_ms.values().sum();
    let report = SimulationReport {
        students: cfg.students,
        minutes: cfg.minutes,
        controller: cfg.controller,
        seed: cfg.seed,
        preset: cfg.dynamics.name.clone(),
        dwell_fractions: Emotion::ALL.iter().map(|&e| (e, metrics.mean_dwell_fraction(e))).collect(),
        collective_dwell_fractions: Emotion::ALL
            .iter()
            .map(|&e| (e, metrics.collective_dwell_fraction(e)))
            .collect(),
        latent_dwell_fractions: latent_ms
            .iter()
            .map(|(&e, &ms)| (e, ms as f64 / total_latent.max(1) as f64))
            .collect(),
        suggestions: metrics.suggestion_count,
        ticks: metrics.ticks,
        actions_applied,
        metrics: metrics.without_latency(),
    };
    Ok(ClosedLoopOutcome {
        report,
        events: session.events().to_vec(),
        transitions: session.transitions().clone(),
        latency_ms: metrics.decision_latency_ms,
    })
}
