use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::draw_point;
use super::population::{gaussian, PopulationPreset, UserProfile};
use super::SimError;
use crate::affect::{Emotion, FuzzyConfig, VaPoint};
use crate::features::FeatureName;
use crate::ingest::{Channel, SensorSample};
use crate::mdp::{Action, TransitionTensor};

pub const DECAY_TO_BORED_JSON: &str = include_str!("../../config/presets/decay_to_bored.json");

const SAMPLE_PERIOD_MS: i64 = 1_000;

/// Latent emotion dynamics of a classroom: `T_a[s][s']` per action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsPreset {
    pub name: String,
    pub latent_period_s: f64,
    /// Distribution of latent states when the session goes live.
    pub initial: BTreeMap<Emotion, f64>,
    pub transitions: TransitionTensor,
}

impl DynamicsPreset {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let preset: Self = serde_json::from_str(text).map_err(|e| SimError::Preset(e.to_string()))?;
        preset.validate()?;
        Ok(preset)
    }

    /// A shipped preset by name, or a JSON file.
    pub fn load(name_or_path: &str) -> Result<Self, SimError> {
        match name_or_path {
            "decay_to_bored" => Self::from_json(DECAY_TO_BORED_JSON),
            path => {
                let text = std::fs::read_to_string(Path::new(path))
                    .map_err(|e| SimError::Preset(format!("{path}: {e}")))?;
                Self::from_json(&text).map_err(|e| SimError::Preset(format!("{path}: {e}")))
            }
        }
    }

    pub fn decay_to_bored() -> Self {
        Self::from_json(DECAY_TO_BORED_JSON).expect("shipped preset is valid")
    }

    /// Every action leaves the latent state unchanged.
    pub fn identity() -> Self {
        let rows = Emotion::ALL
            .iter()
            .map(|&s| (s, Emotion::ALL.iter().map(|&t| (t, f64::from(s == t))).collect()))
            .collect::<BTreeMap<_, _>>();
        Self {
            name: "identity".into(),
            latent_period_s: 30.0,
            initial: Emotion::ALL.iter().map(|&e| (e, 0.25)).collect(),
            transitions: Action::ALL.iter().map(|&a| (a, rows.clone())).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.latent_period_s > 0.0) {
            return Err(SimError::Preset("latent_period_s must be positive".into()));
        }
        check_distribution("initial", &self.initial)?;
        for (a, rows) in &self.transitions {
            for s in Emotion::ALL {
                let row = rows
                    .get(&s)
                    .ok_or_else(|| SimError::Preset(format!("transitions for ({a}, {s}) missing")))?;
                check_distribution(&format!("transitions[{a}][{s}]"), row)?;
            }
        }
        Ok(())
    }

    fn row(&self, action: Action, s: Emotion) -> Result<&BTreeMap<Emotion, f64>, SimError> {
        self.transitions
            .get(&action)
            .and_then(|rows| rows.get(&s))
            .ok_or(SimError::UnknownAction(action))
    }
}

fn check_distribution(what: &str, d: &BTreeMap<Emotion, f64>) -> Result<(), SimError> {
    let sum: f64 = d.values().sum();
    if d.values().any(|&p| !(0.0..=1.0).contains(&p)) || (sum - 1.0).abs() > 1e-9 {
        return Err(SimError::Preset(format!("{what} is not a probability distribution (sum {sum})")));
    }
    Ok(())
}

/// Samples a state from a distribution over emotions.
pub(crate) fn sample_emotion<R: Rng>(d: &BTreeMap<Emotion, f64>, rng: &mut R) -> Emotion {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (&e, &p) in d {
        acc += p;
        if u < acc {
            return e;
        }
    }
    *d.iter().rev().find(|(_, &p)| p > 0.0).map(|(e, _)| e).unwrap_or(&Emotion::Bored)
}

/// A simulated wearer with a latent emotion.
#[derive(Debug, Clone)]
pub struct SyntheticStudent {
    pub profile: UserProfile,
    pub latent: Emotion,
    /// VA point held for the current latent period.
    pub point: VaPoint,
    /// Timestamp of the next emitted sample.
    pub clock_ms: i64,
    pub next_transition_ms: i64,
    pub latent_period_ms: i64,
    rng: ChaCha8Rng,
}

impl SyntheticStudent {
    pub fn new(profile: UserProfile, latent: Emotion, start_ms: i64, latent_period_s: f64, seed: u64) -> Self {
        let period = (latent_period_s * 1000.0).round() as i64;
        Self {
            profile,
            latent,
            point: VaPoint::new(0.0, 0.0),
            clock_ms: start_ms,
            next_transition_ms: start_ms + period,
            latent_period_ms: period,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn id(&self) -> &str {
        &self.profile.user_id
    }

    /// Forces the latent state and draws a fresh VA point for it. The next
    /// transition is one period after `from_ms`.
    pub fn set_latent(&mut self, e: Emotion, preset: &PopulationPreset, from_ms: i64) {
        self.latent = e;
        self.point = draw_point(preset, &FuzzyConfig::default(), e, &mut self.rng);
        self.next_transition_ms = from_ms + self.latent_period_ms;
    }

    pub(crate) fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    fn emit_at(&mut self, preset: &PopulationPreset, ts_ms: i64, out: &mut Vec<SensorSample>) {
        let f = preset.mean_features(&self.profile, self.point);
        let get = |n: FeatureName| f[n.index()];
        let rng = &mut self.rng;
        let hr = get(FeatureName::Hr) + gaussian(rng, preset.hr_sample_sd);
        let rr = 60_000.0 / get(FeatureName::Hr) + gaussian(rng, get(FeatureName::Hrv) / std::f64::consts::SQRT_2);
        let eda = get(FeatureName::Scl) + gaussian(rng, get(FeatureName::Scr));
        let temp = get(FeatureName::Stl) + gaussian(rng, get(FeatureName::Str));
        for (channel, v) in [(Channel::Hr, hr), (Channel::Rr, rr), (Channel::Eda, eda), (Channel::Temp, temp)] {
            out.push(SensorSample::new(self.profile.user_id.clone(), ts_ms, channel, clamp_open(channel, v)));
        }
    }

    /// Emits samples for `dt_s` seconds without latent transitions.
    pub fn hold(&mut self, preset: &PopulationPreset, dt_s: f64) -> Vec<SensorSample> {
        let end = self.clock_ms + (dt_s * 1000.0).round() as i64;
        let mut out = Vec::new();
        while self.clock_ms < end {
            let ts = self.clock_ms;
            self.emit_at(preset, ts, &mut out);
            self.clock_ms += SAMPLE_PERIOD_MS;
        }
        self.next_transition_ms = self.next_transition_ms.max(self.clock_ms);
        out
    }
}

fn clamp_open(channel: Channel, v: f64) -> f64 {
    let (lo, hi) = channel.valid_range();
    let margin = (hi - lo) * 1e-6;
    v.clamp(lo + margin, hi - margin)
}

/// Advances a student by `dt_s` seconds under `action`: the latent state
/// moves once per latent period and 1 Hz samples are emitted on all four
/// channels.
pub fn step_student(
    st: &mut SyntheticStudent,
    preset: &PopulationPreset,
    dynamics: &DynamicsPreset,
    action: Action,
    dt_s: f64,
) -> Result<Vec<SensorSample>, SimError> {
    if !(dt_s > 0.0) {
        return Err(SimError::Config(format!("dt_s must be positive, got {dt_s}")));
    }
    dynamics.row(action, st.latent)?;
    let end = st.clock_ms + (dt_s * 1000.0).round() as i64;
    let mut out = Vec::new();
    while st.clock_ms < end {
        let ts = st.clock_ms;
        while ts >= st.next_transition_ms {
            let row = dynamics.row(action, st.latent)?;
            let next = sample_emotion(row, &mut st.rng);
            let due = st.next_transition_ms;
            st.set_latent(next, preset, due);
        }
        st.emit_at(preset, ts, &mut out);
        st.clock_ms += SAMPLE_PERIOD_MS;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn student(latent: Emotion) -> (SyntheticStudent, PopulationPreset) {
        let preset = PopulationPreset::default();
        let profile = preset.sample_profile("s0", &mut ChaCha8Rng::seed_from_u64(3));
        let mut st = SyntheticStudent::new(profile, latent, 0, 30.0, 9);
        st.set_latent(latent, &preset, 0);
        (st, preset)
    }

    #[test]
    fn sixty_seconds_is_sixty_samples_per_channel() {
        let (mut st, preset) = student(Emotion::Curious);
        let out = step_student(&mut st, &preset, &DynamicsPreset::decay_to_bored(), Action::NoChange, 60.0).unwrap();
        for ch in Channel::ALL {
            assert_eq!(out.iter().filter(|s| s.channel == ch).count(), 60);
        }
        assert!(out.iter().all(|s| s.validate().is_ok()));
    }

    #[test]
    fn identity_dynamics_never_move() {
        let (mut st, preset) = student(Emotion::Confused);
        let dynamics = DynamicsPreset::identity();
        for a in Action::ALL {
            step_student(&mut st, &preset, &dynamics, a, 300.0).unwrap();
            assert_eq!(st.latent, Emotion::Confused);
        }
    }

    #[test]
    fn deterministic_row_moves_after_one_period() {
        let (mut st, preset) = student(Emotion::Confused);
        let mut dynamics = DynamicsPreset::identity();
        let row = dynamics
            .transitions
            .get_mut(&Action::SimplifyContent)
            .unwrap()
            .get_mut(&Emotion::Confused)
            .unwrap();
        row.insert(Emotion::Confused, 0.0);
        row.insert(Emotion::Satisfied, 1.0);
        step_student(&mut st, &preset, &dynamics, Action::SimplifyContent, 29.0).unwrap();
        assert_eq!(st.latent, Emotion::Confused);
        step_student(&mut st, &preset, &dynamics, Action::SimplifyContent, 2.0).unwrap();
        assert_eq!(st.latent, Emotion::Satisfied);
    }

    #[test]
    fn missing_action_is_an_error() {
        let (mut st, preset) = student(Emotion::Bored);
        let mut dynamics = DynamicsPreset::identity();
        dynamics.transitions.remove(&Action::EnrichContent);
        assert!(matches!(
            step_student(&mut st, &preset, &dynamics, Action::EnrichContent, 1.0),
            Err(SimError::UnknownAction(Action::EnrichContent))
        ));
    }

    #[test]
    fn shipped_preset_loads_by_name() {
        let d = DynamicsPreset::load("decay_to_bored").unwrap();
        assert_eq!(d.transitions.len(), 5);
        assert!(DynamicsPreset::load("/nonexistent/preset.json").is_err());
    }
}
