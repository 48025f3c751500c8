//! Bundled six-story fixture and its synthetic ground motion.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use embo_core::signal::{Channel, Record, Unit};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::RunError;
use crate::io;

pub const SIX_STORY_CONFIG: &str = include_str!("../fixtures/six_story.toml");
pub const SIX_STORY_GROUND_FILE: &str = "six_story_ground.csv";

/// Filtered white noise (Kanai-Tajimi form) under a
/// ramp / hold / exponential-decay envelope, scaled to the target peaks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundMotionSpec {
    pub seed: u64,
    pub dt_s: f64,
    pub steps: usize,
    /// Peak absolute acceleration of the x and y components (m/s^2).
    pub peak_m_s2: [f64; 2],
    pub ground_frequency_hz: f64,
    pub ground_damping: f64,
    pub ramp_s: f64,
    pub hold_until_s: f64,
    /// Decay rate after the hold (1/s).
    pub decay_per_s: f64,
}

impl GroundMotionSpec {
    pub fn six_story() -> Self {
        GroundMotionSpec {
            seed: 2024,
            dt_s: 0.01,
            steps: 2000,
            peak_m_s2: [0.7, 0.49],
            ground_frequency_hz: 0.75,
            ground_damping: 0.3,
            ramp_s: 2.0,
            hold_until_s: 10.0,
            decay_per_s: 0.35,
        }
    }

    fn envelope(&self, t: f64) -> f64 {
        if t < self.ramp_s {
            (t / self.ramp_s).powi(2)
        } else if t < self.hold_until_s {
            1.0
        } else {
            (-(t - self.hold_until_s) * self.decay_per_s).exp()
        }
    }
}

pub fn synthetic_ground_motion(spec: &GroundMotionSpec) -> Record {
    let dt = spec.dt_s;
    let wg = 2.0 * PI * spec.ground_frequency_hz;
    let zg = spec.ground_damping;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut channels = Vec::new();
    for (r, name) in ["ug_x", "ug_y"].iter().enumerate() {
        let (mut x, mut v) = (0.0f64, 0.0f64);
        let mut samples = Vec::with_capacity(spec.steps);
        for k in 0..spec.steps {
            let w: f64 = StandardNormal.sample(&mut rng);
            let a = w / dt.sqrt() - 2.0 * zg * wg * v - wg * wg * x;
            v += a * dt;
            x += v * dt;
            let acc = -(2.0 * zg * wg * v + wg * wg * x);
            samples.push(acc * spec.envelope(k as f64 * dt));
        }
        let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        let scale = if peak > 0.0 { spec.peak_m_s2[r] / peak } else { 0.0 };
        for s in &mut samples {
            *s *= scale;
        }
        channels.push(Channel {
            name: name.to_string(),
            unit: Unit::Acceleration,
            samples,
        });
    }
    let mut rec = Record::new(0.0, dt, channels).expect("generator output is finite");
    rec.meta.insert("generator".into(), "kanai-tajimi filtered white noise".into());
    rec.meta.insert("seed".into(), spec.seed.to_string());
    rec.meta.insert(
        "spec".into(),
        serde_json::to_string(spec).expect("spec serializes"),
    );
    rec
}

/// Writes the fixture config and its ground motion into `dir`; returns
/// the config path.
pub fn write_six_story(dir: &Path) -> Result<PathBuf, RunError> {
    let cfg = dir.join("six_story.toml");
    io::write_file(&cfg, SIX_STORY_CONFIG.as_bytes())?;
    io::write_record(&dir.join(SIX_STORY_GROUND_FILE), &synthetic_ground_motion(&GroundMotionSpec::six_story()))?;
    Ok(cfg)
}
