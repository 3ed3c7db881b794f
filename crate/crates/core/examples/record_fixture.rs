//! Records the NDJSON sample stream used by the service replay tests.
//!
//! Three synthetic students: 60 s of calibration cycling through all four
//! emotions, then 90 s with the whole class curious. Run with
//! `cargo run -p classpulse-core --example record_fixture -- <out.ndjson>`.

use std::io::Write;

use classpulse_core::simulator::{PopulationPreset, SyntheticStudent};
use classpulse_core::Emotion;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> std::io::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "session.ndjson".into());
    let preset = PopulationPreset::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut students: Vec<SyntheticStudent> = ["ana", "ben", "cho"]
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let profile = preset.sample_profile(*id, &mut rng);
            SyntheticStudent::new(profile, Emotion::Bored, 0, 30.0, 100 + i as u64)
        })
        .collect();

    let mut lines = Vec::new();
    let mut emit = |students: &mut Vec<SyntheticStudent>, seconds: i64| {
        for _ in 0..seconds {
            for st in students.iter_mut() {
                lines.extend(st.hold(&preset, 1.0).iter().map(|s| s.render()));
            }
        }
    };
    for (block, e) in Emotion::ALL.into_iter().enumerate() {
        for st in students.iter_mut() {
            st.set_latent(e, &preset, block as i64 * 15_000);
        }
        emit(&mut students, 15);
    }
    for st in students.iter_mut() {
        st.set_latent(Emotion::Curious, &preset, 60_000);
    }
    emit(&mut students, 90);

    let mut file = std::io::BufWriter::new(std::fs::File::create(&out)?);
    for line in &lines {
        writeln!(file, "{line}")?;
    }
    file.flush()?;
    eprintln!("wrote {} samples to {out}", lines.len());
    Ok(())
}
