//! Measurement records: acceleration to velocity conversion, synthetic
//! noise and band-limited resampling.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Unit {
    #[serde(rename = "m/s^2")]
    Acceleration,
    #[serde(rename = "m/s")]
    Velocity,
    /// Floor rotation channels.
    #[serde(rename = "rad/s^2")]
    AngularAcceleration,
    #[serde(rename = "rad/s")]
    AngularVelocity,
}

impl Unit {
    pub fn label(self) -> &'static str {
        match self {
            Unit::Acceleration => "m/s^2",
            Unit::Velocity => "m/s",
            Unit::AngularAcceleration => "rad/s^2",
            Unit::AngularVelocity => "rad/s",
        }
    }

    /// Unit of the time integral, if this is an acceleration.
    pub fn integrated(self) -> Option<Unit> {
        match self {
            Unit::Acceleration => Some(Unit::Velocity),
            Unit::AngularAcceleration => Some(Unit::AngularVelocity),
            _ => None,
        }
    }

    pub fn parse(s: &str) -> Option<Unit> {
        match s.trim() {
            "m/s^2" | "m/s2" | "m/s/s" => Some(Unit::Acceleration),
            "m/s" => Some(Unit::Velocity),
            "rad/s^2" | "rad/s2" => Some(Unit::AngularAcceleration),
            "rad/s" => Some(Unit::AngularVelocity),
            _ => None,
        }
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub name: String,
    pub unit: Unit,
    pub samples: Vec<f64>,
}

/// Uniformly sampled multi-channel record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    /// Start time (s).
    pub t0: f64,
    /// Sample interval (s).
    pub dt: f64,
    pub channels: Vec<Channel>,
    pub meta: BTreeMap<String, String>,
}

impl Record {
    pub fn new(t0: f64, dt: f64, channels: Vec<Channel>) -> Result<Self> {
        let rec = Record {
            t0,
            dt,
            channels,
            meta: BTreeMap::new(),
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::invalid("dt", "must be finite and > 0"));
        }
        if !self.t0.is_finite() {
            return Err(Error::invalid("t0", "must be finite"));
        }
        let n = self.len();
        for c in &self.channels {
            if c.samples.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "channel length",
                    expected: n,
                    found: c.samples.len(),
                });
            }
            if let Some(k) = c.samples.iter().position(|x| !x.is_finite()) {
                return Err(Error::invalid(
                    alloc::format!("channels.{}[{k}]", c.name),
                    "sample is not finite",
                ));
            }
        }
        Ok(())
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, |c| c.samples.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.t0 + k as f64 * self.dt).collect()
    }

    pub fn channel(&self, name: &str) -> Option<&Channel> {
        self.channels.iter().find(|c| c.name == name)
    }

    /// Channels as rows.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.channels.len(), self.len(), |r, k| self.channels[r].samples[k])
    }

    fn require_acceleration(&self) -> Result<()> {
        match self.channels.iter().find(|c| c.unit.integrated().is_none()) {
            Some(c) => Err(Error::UnitMismatch {
                channel: c.name.clone(),
                expected: "m/s^2 or rad/s^2",
                found: c.unit.label().to_string(),
            }),
            None => Ok(()),
        }
    }
}

/// Zero-phase Butterworth high-pass applied after integration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSpec {
    #[serde(rename = "corner_hz")]
    pub corner: f64,
    /// Even order >= 2.
    pub order: usize,
    pub detrend: bool,
}

impl Default for FilterSpec {
    fn default() -> Self {
        FilterSpec {
            corner: 0.1,
            order: 4,
            detrend: true,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn run(&self, x: &mut [f64], z: [f64; 2]) {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let (mut z1, mut z2) = (z[0], z[1]);
        for v in x.iter_mut() {
            let y = b0 * *v + z1;
            z1 = b1 * *v - a1 * y + z2;
            z2 = b2 * *v - a2 * y;
            *v = y;
        }
    }
}

fn highpass_sections(spec: &FilterSpec, dt: f64) -> Result<Vec<Biquad>> {
    if !(spec.corner.is_finite() && spec.corner > 0.0) {
        return Err(Error::invalid("filter.corner_hz", "must be finite and > 0"));
    }
    if spec.corner >= 0.4 / dt {
        return Err(Error::CornerTooHigh {
            corner_hz: spec.corner,
            dt,
        });
    }
    if spec.order < 2 || !spec.order.is_multiple_of(2) {
        return Err(Error::invalid("filter.order", "must be an even number >= 2"));
    }
    let k = libm::tan(PI * spec.corner * dt);
    let n = spec.order;
    Ok((1..=n / 2)
        .map(|i| {
            let q = 1.0 / (2.0 * libm::sin((2 * i - 1) as f64 * PI / (2 * n) as f64));
            let norm = 1.0 / (1.0 + k / q + k * k);
            Biquad {
                b: [norm, -2.0 * norm, norm],
                a: [2.0 * (k * k - 1.0) * norm, (1.0 - k / q + k * k) * norm],
            }
        })
        .collect())
}

/// Cascade with the first section started in steady state for a constant
/// input equal to the first sample.
fn cascade(sections: &[Biquad], x: &mut [f64]) {
    let x0 = x.first().copied().unwrap_or(0.0);
    for (i, s) in sections.iter().enumerate() {
        let z = if i == 0 {
            [-s.b[0] * x0, s.b[2] * x0]
        } else {
            [0.0, 0.0]
        };
        s.run(x, z);
    }
}

fn filtfilt(sections: &[Biquad], x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let pad = pad.min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    for k in (1..=pad).rev() {
        ext.push(2.0 * x[0] - x[k]);
    }
    ext.extend_from_slice(x);
    for k in 1..=pad {
        ext.push(2.0 * x[n - 1] - x[n - 1 - k]);
    }
    cascade(sections, &mut ext);
    ext.reverse();
    cascade(sections, &mut ext);
    ext.reverse();
    ext[pad..pad + n].to_vec()
}

fn detrend(x: &mut [f64]) {
    let n = x.len();
    if n < 2 {
        return;
    }
    let nf = n as f64;
    let tm = (nf - 1.0) / 2.0;
    let ym = x.iter().sum::<f64>() / nf;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (k, v) in x.iter().enumerate() {
        let d = k as f64 - tm;
        sxy += d * (v - ym);
        sxx += d * d;
    }
    let slope = sxy / sxx;
    for (k, v) in x.iter_mut().enumerate() {
        *v -= ym + slope * (k as f64 - tm);
    }
}

fn integrate(a: &[f64], dt: f64) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len());
    let mut acc = 0.0;
    for (k, &x) in a.iter().enumerate() {
        if k > 0 {
            acc += 0.5 * dt * (a[k - 1] + x);
        }
        v.push(acc);
    }
    v
}

/// Trapezoidal integration, optional linear detrend, then zero-phase
/// high-pass filtering.
pub fn accel_to_velocity(rec: &Record, spec: &FilterSpec) -> Result<Record> {
    rec.validate()?;
    rec.require_acceleration()?;
    let sections = highpass_sections(spec, rec.dt)?;
    // one corner period of odd-extension padding on each side
    let pad = (libm::ceil(1.0 / (spec.corner * rec.dt)) as usize).max(3 * (spec.order + 1));
    let channels = rec
        .channels
        .iter()
        .map(|c| {
            let mut v = integrate(&c.samples, rec.dt);
            if spec.detrend {
                detrend(&mut v);
            }
            Channel {
                name: c.name.clone(),
                unit: c.unit.integrated().unwrap_or(Unit::Velocity),
                samples: filtfilt(&sections, &v, pad),
            }
        })
        .collect();
    Ok(Record {
        t0: rec.t0,
        dt: rec.dt,
        channels,
        meta: rec.meta.clone(),
    })
}

/// Adds independent Gaussian white noise of two-sided spectral density
/// `intensities[c]` (unit^2 s/rad) to channel `c`; the per-sample
/// variance is `2 pi S / dt`.
pub fn add_noise(rec: &Record, intensities: &[f64], seed: u64) -> Result<Record> {
    rec.validate()?;
    if intensities.len() != rec.channels.len() {
        return Err(Error::DimensionMismatch {
            what: "noise intensities",
            expected: rec.channels.len(),
            found: intensities.len(),
        });
    }
    for (c, &s) in rec.channels.iter().zip(intensities) {
        if !s.is_finite() || s < 0.0 {
            return Err(Error::NegativeIntensity(c.name.clone()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = rec.clone();
    for (c, &s) in out.channels.iter_mut().zip(intensities) {
        if s == 0.0 {
            continue;
        }
        let sd = libm::sqrt(2.0 * PI * s / rec.dt);
        for x in c.samples.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x += sd * z;
        }
    }
    Ok(out)
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        libm::sin(PI * x) / (PI * x)
    }
}

/// Windowed-sinc interpolation onto `t0 + j dt_target`, low-passed at 0.9
/// of the lower of the two Nyquist frequencies.
pub fn resample(rec: &Record, dt_target: f64) -> Result<Record> {
    rec.validate()?;
    if !(dt_target.is_finite() && dt_target > 0.0) {
        return Err(Error::invalid("dt_target", "must be finite and > 0"));
    }
    if dt_target == rec.dt {
        return Ok(rec.clone());
    }
    let ratio = dt_target / rec.dt;
    if !(0.125..=8.0).contains(&ratio) {
        return Err(Error::ResampleRatio {
            dt: rec.dt,
            target: dt_target,
        });
    }
    let n = rec.len();
    let duration = if n > 0 { (n - 1) as f64 * rec.dt } else { 0.0 };
    let m = libm::floor(duration / dt_target + 1e-9) as usize + usize::from(n > 0);
    // cutoff as a fraction of the input Nyquist
    let r = 0.9 * (1.0 / ratio).min(1.0);
    let half = libm::ceil(16.0 / r);
    let channels = rec
        .channels
        .iter()
        .map(|c| {
            let samples = (0..m)
                .map(|j| {
                    let pos = j as f64 * ratio;
                    let lo = libm::ceil(pos - half).max(0.0) as usize;
                    let hi = (libm::floor(pos + half) as usize).min(n - 1);
                    let mut acc = 0.0;
                    for k in lo..=hi {
                        let tau = pos - k as f64;
                        let w = 0.42 + 0.5 * libm::cos(PI * tau / half) + 0.08 * libm::cos(2.0 * PI * tau / half);
                        acc += c.samples[k] * r * sinc(r * tau) * w;
                    }
                    acc
                })
                .collect();
            Channel {
                name: c.name.clone(),
                unit: c.unit,
                samples,
            }
        })
        .collect();
    Ok(Record {
        t0: rec.t0,
        dt: dt_target,
        channels,
        meta: rec.meta.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(dt: f64, unit: Unit, data: Vec<Vec<f64>>) -> Record {
        let channels = data
            .into_iter()
            .enumerate()
            .map(|(i, samples)| Channel {
                name: alloc::format!("c{i}"),
                unit,
                samples,
            })
            .collect();
        Record::new(0.0, dt, channels).unwrap()
    }

    fn wave(n: usize, dt: f64, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..n).map(|k| f(k as f64 * dt)).collect()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    /// Averaged two-sided periodogram (per rad/s) at bins `2 pi k / (N dt)`.
    fn periodogram(x: &[f64], dt: f64, seg: usize) -> Vec<f64> {
        let segments = x.len() / seg;
        let mut p = vec![0.0; seg / 2];
        for s in 0..segments {
            let chunk = &x[s * seg..(s + 1) * seg];
            for (k, pk) in p.iter_mut().enumerate() {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, v) in chunk.iter().enumerate() {
                    let ph = 2.0 * PI * (k * n) as f64 / seg as f64;
                    re += v * ph.cos();
                    im -= v * ph.sin();
                }
                *pk += dt / (2.0 * PI * seg as f64) * (re * re + im * im);
            }
        }
        p.iter().map(|v| v / segments as f64).collect()
    }

    #[test]
    fn zero_in_zero_out() {
        let r = rec(0.01, Unit::Acceleration, vec![vec![0.0; 500]]);
        let v = accel_to_velocity(&r, &FilterSpec::default()).unwrap();
        assert!(v.channels[0].samples.iter().all(|x| *x == 0.0));
        assert_eq!(v.channels[0].unit, Unit::Velocity);
    }

    #[test]
    fn cosine_integrates_to_sine() {
        let dt = 0.01;
        let w = 2.0 * PI * 2.0;
        let r = rec(dt, Unit::Acceleration, vec![wave(6000, dt, |t| (w * t).cos())]);
        let v = accel_to_velocity(&r, &FilterSpec::default()).unwrap();
        let s = &v.channels[0].samples;
        let target = wave(6000, dt, |t| (w * t).sin() / w);
        let mid = 1000..5000;
        let amp = s[mid.clone()].iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!((amp * w - 1.0).abs() < 0.01, "amplitude {}", amp * w);
        let err: Vec<f64> = mid.clone().map(|k| s[k] - target[k]).collect();
        assert!(rms(&err) < 0.01 * rms(&target[mid]));
    }

    #[test]
    fn constant_bias_is_removed() {
        let dt = 0.01;
        let base = wave(4000, dt, |t| (7.0 * t).sin() + 0.5 * (23.0 * t).cos());
        let biased: Vec<f64> = base.iter().map(|x| x + 0.3).collect();
        let spec = FilterSpec::default();
        let a = accel_to_velocity(&rec(dt, Unit::Acceleration, vec![base]), &spec).unwrap();
        let b = accel_to_velocity(&rec(dt, Unit::Acceleration, vec![biased]), &spec).unwrap();
        let diff: Vec<f64> = a.channels[0]
            .samples
            .iter()
            .zip(&b.channels[0].samples)
            .map(|(x, y)| x - y)
            .collect();
        assert!(rms(&diff) < 0.01 * rms(&a.channels[0].samples));
    }

    #[test]
    fn conversion_is_linear_and_zero_phase() {
        let dt = 0.01;
        let a1 = wave(3000, dt, |t| (5.0 * t).sin() * (0.3 * t).cos());
        let a2 = wave(3000, dt, |t| 0.2 + (11.0 * t).cos());
        let sum: Vec<f64> = a1.iter().zip(&a2).map(|(x, y)| x + y).collect();
        let spec = FilterSpec::default();
        let f = |a: Vec<f64>| accel_to_velocity(&rec(dt, Unit::Acceleration, vec![a]), &spec).unwrap().channels[0].samples.clone();
        let (v1, v2, vs) = (f(a1), f(a2), f(sum));
        let scale = rms(&vs);
        for k in 0..vs.len() {
            assert!((vs[k] - v1[k] - v2[k]).abs() < 1e-10 * scale);
        }

        let w = 2.0 * PI * 1.5;
        let v = f(wave(4000, dt, |t| (w * t).cos()));
        let target = wave(4000, dt, |t| (w * t).sin() / w);
        let xcorr = |lag: isize| -> f64 {
            (1000..3000).map(|k| v[k] * target[(k as isize + lag) as usize]).sum()
        };
        let best = (-20..=20).max_by(|a, b| xcorr(*a).total_cmp(&xcorr(*b))).unwrap();
        assert_eq!(best, 0);
    }

    #[test]
    fn conversion_errors() {
        let r = rec(0.01, Unit::Velocity, vec![vec![0.0; 10]]);
        assert!(matches!(accel_to_velocity(&r, &FilterSpec::default()), Err(Error::UnitMismatch { .. })));
        let r = rec(0.01, Unit::Acceleration, vec![vec![0.0; 10]]);
        let hot = FilterSpec {
            corner: 40.0,
            ..Default::default()
        };
        assert!(matches!(accel_to_velocity(&r, &hot), Err(Error::CornerTooHigh { .. })));
        let odd = FilterSpec {
            order: 3,
            ..Default::default()
        };
        assert!(accel_to_velocity(&r, &odd).is_err());
    }

    #[test]
    fn noise_contract() {
        let dt = 0.01;
        let r = rec(dt, Unit::Velocity, vec![vec![0.0; 20_000], vec![1.0; 20_000]]);
        let same = add_noise(&r, &[0.0, 0.0], 3).unwrap();
        assert_eq!(same, r);
        assert!(matches!(add_noise(&r, &[-1.0, 0.0], 3), Err(Error::NegativeIntensity(c)) if c == "c0"));

        let s = 1e-4;
        let a = add_noise(&r, &[s, s], 11).unwrap();
        let b = add_noise(&r, &[s, s], 11).unwrap();
        let c = add_noise(&r, &[s, s], 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let target = 2.0 * PI * s / dt;
        for rec in [&a, &c] {
            let x = &rec.channels[0].samples;
            let var = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
            assert!((var - target).abs() / target < 0.05, "{var} vs {target}");
        }
    }

    #[test]
    fn noise_periodogram_is_flat() {
        let dt = 0.02;
        let s = 2e-3;
        let r = rec(dt, Unit::Velocity, vec![vec![0.0; 100_000]]);
        let x = add_noise(&r, &[s], 99).unwrap().channels[0].samples.clone();
        let p = periodogram(&x, dt, 128);
        // average over eight bands to tame the estimator variance
        for band in p[1..].chunks(p.len() / 8) {
            let m = band.iter().sum::<f64>() / band.len() as f64;
            assert!((m - s).abs() / s < 0.10, "band mean {m} vs {s}");
        }
    }

    #[test]
    fn resample_identity_and_range() {
        let r = rec(0.01, Unit::Velocity, vec![wave(100, 0.01, |t| t.sin())]);
        assert_eq!(resample(&r, 0.01).unwrap(), r);
        assert!(matches!(resample(&r, 0.1), Err(Error::ResampleRatio { .. })));
        assert!(matches!(resample(&r, 0.001), Err(Error::ResampleRatio { .. })));
    }

    #[test]
    fn resampled_sinusoid_keeps_amplitude() {
        let dt = 0.01;
        let w = 2.0 * PI * 3.0;
        let r = rec(dt, Unit::Velocity, vec![wave(3000, dt, |t| (w * t).sin())]);
        for target in [0.02, 0.005, 0.03] {
            let out = resample(&r, target).unwrap();
            let s = &out.channels[0].samples;
            let n = s.len();
            let exact = wave(n, target, |t| (w * t).sin());
            let mid = n / 5..4 * n / 5;
            let ratio = rms(&s[mid.clone()]) / rms(&exact[mid.clone()]);
            assert!((ratio - 1.0).abs() < 5e-3, "dt {target}: ratio {ratio}");
            let err: Vec<f64> = mid.clone().map(|k| s[k] - exact[k]).collect();
            assert!(rms(&err) < 5e-3);
        }
    }

    #[test]
    fn downsampled_noise_keeps_shared_band() {
        let dt = 0.01;
        let r = rec(dt, Unit::Velocity, vec![vec![0.0; 40_000]]);
        let x = add_noise(&r, &[1e-3], 5).unwrap();
        let y = resample(&x, 2.0 * dt).unwrap();
        let px = periodogram(&x.channels[0].samples, dt, 256);
        let py = periodogram(&y.channels[0].samples, 2.0 * dt, 128);
        // shared band up to 0.8 of the output Nyquist
        let band_x: f64 = px[1..(0.4 * 128.0) as usize].iter().sum::<f64>() / (0.4 * 128.0 - 1.0);
        let band_y: f64 = py[1..(0.8 * 64.0) as usize].iter().sum::<f64>() / (0.8 * 64.0 - 1.0);
        assert!((band_y - band_x).abs() / band_x < 0.05, "{band_y} vs {band_x}");
        let var = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>() / v.len() as f64;
        let kept = var(&y.channels[0].samples) / var(&x.channels[0].samples);
        assert!((kept - 0.45).abs() < 0.03, "kept fraction {kept}");
    }
}
