//! Real-time affective feedback for classrooms.
//!
//! Wearable samples flow through [`ingest`] into per-student ring buffers,
//! [`features`] turns those into six physiological features, [`calibration`]
//! normalizes them per student, and [`affect`] maps the result onto the
//! valence/arousal plane and the four learning emotions. [`engine`] aggregates
//! students into a collective state and asks the [`mdp`] policy for a teaching
//! action. [`simulator`] closes the loop with synthetic students.

pub mod affect;
pub mod calibration;
pub mod engine;
pub mod features;
pub mod ingest;
pub mod mdp;
pub mod simulator;

pub use affect::{Emotion, EmotionState, VaPoint};
pub use mdp::Action;
