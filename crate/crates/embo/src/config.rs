//! Experiment configuration (TOML, schema version 1).
//!
//! Every quantity with a physical dimension carries its unit in the key
//! name. Parsing rejects unknown keys; [`ExperimentConfig::validate`]
//! checks everything else and reports the offending key path.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use embo_core::damage::PsiCoefficients;
use embo_core::dynamics::IntegratorSettings;
use embo_core::gain::{GainSettings, GridSettings};
use embo_core::hysteresis::{SawsParameters, WallDamageParams};
use embo_core::optimize::NelderMeadSettings;
use embo_core::signal::FilterSpec;
use embo_core::structure::{Axis, FloorLayout, FloorMass, WallPlacement};
use serde::{Deserialize, Serialize};

use crate::error::RunError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub building: BuildingConfig,
    pub ground_motion: GroundMotionConfig,
    pub instrumentation: InstrumentationConfig,
    pub gain: GainConfig,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    pub damage: DamageConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub seeds: SeedConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildingConfig {
    pub story_heights_m: Vec<f64>,
    /// One entry per story, bottom up.
    pub floors: Vec<FloorConfig>,
    pub damping: DampingConfig,
    pub wall_types: BTreeMap<String, WallTypeConfig>,
    pub walls: Vec<WallConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FloorConfig {
    pub mass_t: f64,
    /// Rotational inertia about the mass center.
    pub inertia_t_m2: f64,
}

/// Rayleigh damping pinned at two anchors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DampingConfig {
    pub anchors: Vec<DampingAnchor>,
}

/// Either `mode` (1-based, of the initial-stiffness model) or
/// `omega_rad_s`, plus the damping ratio there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DampingAnchor {
    pub mode: Option<usize>,
    pub omega_rad_s: Option<f64>,
    pub ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WallTypeConfig {
    pub f0_kn: f64,
    pub fi_kn: f64,
    pub du_mm: f64,
    pub s0_kn_per_mm: f64,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub r4: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl WallTypeConfig {
    pub fn saws(&self) -> SawsParameters {
        SawsParameters {
            f0: self.f0_kn,
            fi: self.fi_kn,
            du: self.du_mm,
            s0: self.s0_kn_per_mm,
            r1: self.r1,
            r2: self.r2,
            r3: self.r3,
            r4: self.r4,
            alpha: self.alpha,
            beta: self.beta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WallConfig {
    pub id: String,
    pub story: usize,
    /// Point on the wall line, relative to the floor mass center.
    pub origin_m: [f64; 2],
    pub direction: [f64; 2],
    #[serde(rename = "type")]
    pub wall_type: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundMotionConfig {
    /// Record file, relative to the config file.
    pub file: PathBuf,
    #[serde(default = "one")]
    pub scale: f64,
    /// Channel names for the x and y components.
    #[serde(default = "default_ground_channels")]
    pub channels: [String; 2],
}

fn one() -> f64 {
    1.0
}

fn default_ground_channels() -> [String; 2] {
    ["ug_x".to_string(), "ug_y".to_string()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstrumentationConfig {
    pub measured: Vec<MeasuredDof>,
    pub noise: ChannelNoiseConfig,
    #[serde(default)]
    pub filter: FilterSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasuredDof {
    pub story: usize,
    pub axis: Axis,
}

impl MeasuredDof {
    pub fn channel_name(&self) -> String {
        format!("s{}_{}", self.story, self.axis.label())
    }
}

/// Acceleration noise added to each synthesized channel. Exactly one of
/// the two forms must be given.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelNoiseConfig {
    /// Noise RMS as a fraction of each channel's own RMS.
    pub rms_fraction: Option<f64>,
    /// Two-sided PSD per channel ((m/s^2)^2 s/rad, or rad^2/s^3 for
    /// rotations).
    pub psd: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainConfig {
    /// Bypass the optimizer with this diagonal (kN s/m, or kN m s for
    /// rotations).
    pub explicit_e: Option<Vec<f64>>,
    pub noise: Option<NoiseConfig>,
    #[serde(default)]
    pub optimizer: GainSettings,
    #[serde(default)]
    pub grid: GridSettings,
}

/// Design noise model for the gain search. Each pair takes exactly one
/// entry.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Two-sided process PSD, one value per ground component.
    pub process_psd_m2_per_s3: Option<Vec<f64>>,
    /// White-equivalent PSD of each ground component (mean square
    /// times dt / 2 pi).
    pub process_from_ground_motion: Option<bool>,
    /// Two-sided velocity noise PSD per channel.
    pub measurement_psd: Option<Vec<f64>>,
    /// Velocity noise taken as the channel acceleration noise divided by
    /// the squared fundamental frequency, times this weight.
    pub measurement_weight: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    /// Defaults to the ground-motion sample interval.
    pub dt_s: Option<f64>,
    pub newmark_beta: Option<f64>,
    pub newmark_gamma: Option<f64>,
    pub newton_tol_kn: Option<f64>,
    pub newton_max_iter: Option<usize>,
    pub max_bisections: Option<usize>,
}

impl IntegratorConfig {
    pub fn settings(&self, record_dt: f64) -> IntegratorSettings {
        let mut s = IntegratorSettings::average_acceleration(self.dt_s.unwrap_or(record_dt));
        if let Some(v) = self.newmark_beta {
            s.newmark_beta = v;
        }
        if let Some(v) = self.newmark_gamma {
            s.newmark_gamma = v;
        }
        if let Some(v) = self.newton_tol_kn {
            s.newton_tol = v;
        }
        if let Some(v) = self.newton_max_iter {
            s.newton_max_iter = v;
        }
        if let Some(v) = self.max_bisections {
            s.max_bisections = v;
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DamageConfig {
    #[serde(default)]
    pub beta: PsiCoefficients,
    /// Keyed by wall type name.
    pub wall_types: BTreeMap<String, DamageTypeConfig>,
}

/// `delta_u_mm` and `f_ey_kn` have no defaults.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DamageTypeConfig {
    pub delta_u_mm: Option<f64>,
    pub f_ey_kn: Option<f64>,
    /// Nail spacing (in).
    pub x_ns_in: f64,
    pub x_wh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Relative to the config file unless absolute.
    #[serde(default = "default_out_dir")]
    pub directory: PathBuf,
    #[serde(default = "yes")]
    pub history_csv: bool,
    #[serde(default = "yes")]
    pub svg: bool,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn yes() -> bool {
    true
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: default_out_dir(),
            history_csv: true,
            svg: true,
        }
    }
}

/// Pass/fail thresholds for `verify`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// Peak inter-story drift, relative to the true peak, at stories
    /// without sensors.
    pub max_drift_error: f64,
    /// Peak floor displacement, relative, at stories without sensors.
    pub max_displacement_error: f64,
    /// Dissipated energy per wall, relative.
    pub max_energy_error: f64,
    /// Energy audit of the truth run.
    pub max_energy_audit: f64,
    /// Observer model with all wall strengths and stiffnesses scaled by
    /// this factor; reported only.
    pub wall_scale_probe: Option<f64>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            max_drift_error: 0.15,
            max_displacement_error: 0.10,
            max_energy_error: 0.20,
            max_energy_audit: 0.01,
            wall_scale_probe: Some(2.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedConfig {
    pub measurement_noise: u64,
}

impl Default for SeedConfig {
    fn default() -> Self {
        SeedConfig { measurement_noise: 7 }
    }
}

/// A config file after parsing, with paths resolved against its folder.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
    /// Raw file text, hashed into the manifest.
    pub text: String,
}

impl LoadedConfig {
    pub fn ground_motion_path(&self) -> PathBuf {
        self.base_dir.join(&self.config.ground_motion.file)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.base_dir.join(&self.config.outputs.directory)
    }
}

pub fn load(path: &Path) -> Result<LoadedConfig, RunError> {
    let text = std::fs::read_to_string(path).map_err(|e| RunError::io(path, e))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let config = parse(&text)?;
    Ok(LoadedConfig { config, base_dir, text })
}

/// Parses and validates.
pub fn parse(text: &str) -> Result<ExperimentConfig, RunError> {
    let raw: toml::Value = toml::from_str(text).map_err(|e| RunError::Config(e.message().to_string()))?;
    match raw.get("schema_version") {
        None => return Err(RunError::config("schema_version", "missing")),
        Some(toml::Value::Integer(v)) if *v == SCHEMA_VERSION as i64 => {}
        Some(v) => {
            return Err(RunError::config(
                "schema_version",
                format!("unsupported value {v}; this build reads version {SCHEMA_VERSION}"),
            ))
        }
    }
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| {
        let msg = e.message().to_string();
        RunError::Config(msg)
    })?;
    config.validate()?;
    Ok(config)
}

fn positive(path: impl Into<String>, v: f64) -> Result<(), RunError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(RunError::config(path, format!("must be finite and > 0, got {v}")))
    }
}

fn nonnegative(path: impl Into<String>, v: f64) -> Result<(), RunError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(RunError::config(path, format!("must be finite and >= 0, got {v}")))
    }
}

fn exactly_one(path: &str, a: (&str, bool), b: (&str, bool)) -> Result<(), RunError> {
    match (a.1, b.1) {
        (true, false) | (false, true) => Ok(()),
        (true, true) => Err(RunError::config(path, format!("give either `{}` or `{}`, not both", a.0, b.0))),
        (false, false) => Err(RunError::config(path, format!("one of `{}` or `{}` is required", a.0, b.0))),
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), RunError> {
        let b = &self.building;
        let n_stories = b.story_heights_m.len();
        if n_stories == 0 {
            return Err(RunError::config("building.story_heights_m", "at least one story is required"));
        }
        for (i, h) in b.story_heights_m.iter().enumerate() {
            positive(format!("building.story_heights_m[{i}]"), *h)?;
        }
        if b.floors.len() != n_stories {
            return Err(RunError::config(
                "building.floors",
                format!("{} entries for {n_stories} stories", b.floors.len()),
            ));
        }
        for (i, f) in b.floors.iter().enumerate() {
            positive(format!("building.floors[{i}].mass_t"), f.mass_t)?;
            positive(format!("building.floors[{i}].inertia_t_m2"), f.inertia_t_m2)?;
        }
        if b.damping.anchors.len() != 2 {
            return Err(RunError::config("building.damping.anchors", "exactly two anchors are required"));
        }
        for (i, a) in b.damping.anchors.iter().enumerate() {
            let path = format!("building.damping.anchors[{i}]");
            exactly_one(&path, ("mode", a.mode.is_some()), ("omega_rad_s", a.omega_rad_s.is_some()))?;
            if let Some(m) = a.mode {
                if m == 0 || m > 3 * n_stories {
                    return Err(RunError::config(format!("{path}.mode"), format!("must lie in 1..={}", 3 * n_stories)));
                }
            }
            if let Some(w) = a.omega_rad_s {
                positive(format!("{path}.omega_rad_s"), w)?;
            }
            if !(a.ratio.is_finite() && a.ratio >= 0.0 && a.ratio < 1.0) {
                return Err(RunError::config(format!("{path}.ratio"), "must lie in [0, 1)"));
            }
        }
        for (name, t) in &b.wall_types {
            t.saws()
                .validate()
                .map_err(|e| RunError::config(format!("building.wall_types.{name}"), e.to_string()))?;
        }
        if b.walls.is_empty() {
            return Err(RunError::config("building.walls", "at least one wall is required"));
        }
        let mut ids = std::collections::BTreeSet::new();
        for (i, w) in b.walls.iter().enumerate() {
            let path = format!("building.walls[{i}]");
            if w.id.is_empty() || w.id.contains([',', '"', '\n']) {
                return Err(RunError::config(format!("{path}.id"), "must be non-empty without commas, quotes or newlines"));
            }
            if !ids.insert(w.id.as_str()) {
                return Err(RunError::config(format!("{path}.id"), format!("duplicate id `{}`", w.id)));
            }
            if w.story == 0 || w.story > n_stories {
                return Err(RunError::config(format!("{path}.story"), format!("must lie in 1..={n_stories}")));
            }
            if !b.wall_types.contains_key(&w.wall_type) {
                return Err(RunError::config(format!("{path}.type"), format!("unknown wall type `{}`", w.wall_type)));
            }
            if w.origin_m.iter().any(|x| !x.is_finite()) {
                return Err(RunError::config(format!("{path}.origin_m"), "must be finite"));
            }
            let norm = (w.direction[0].powi(2) + w.direction[1].powi(2)).sqrt();
            if !(norm.is_finite() && (norm - 1.0).abs() < 1e-9) {
                return Err(RunError::config(format!("{path}.direction"), format!("must be a unit vector, norm is {norm}")));
            }
        }

        let g = &self.ground_motion;
        if g.file.as_os_str().is_empty() {
            return Err(RunError::config("ground_motion.file", "must name a record file"));
        }
        if !(g.scale.is_finite()) {
            return Err(RunError::config("ground_motion.scale", "must be finite"));
        }

        let ins = &self.instrumentation;
        if ins.measured.is_empty() {
            return Err(RunError::config("instrumentation.measured", "at least one measured DoF is required"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (i, m) in ins.measured.iter().enumerate() {
            if m.story == 0 || m.story > n_stories {
                return Err(RunError::config(
                    format!("instrumentation.measured[{i}].story"),
                    format!("must lie in 1..={n_stories}"),
                ));
            }
            if !seen.insert((m.story, m.axis.offset())) {
                return Err(RunError::config(format!("instrumentation.measured[{i}]"), "DoF listed twice"));
            }
        }
        let nz = &ins.noise;
        exactly_one("instrumentation.noise", ("rms_fraction", nz.rms_fraction.is_some()), ("psd", nz.psd.is_some()))?;
        if let Some(f) = nz.rms_fraction {
            nonnegative("instrumentation.noise.rms_fraction", f)?;
        }
        if let Some(p) = &nz.psd {
            if p.len() != ins.measured.len() {
                return Err(RunError::config(
                    "instrumentation.noise.psd",
                    format!("{} values for {} channels", p.len(), ins.measured.len()),
                ));
            }
            for (i, v) in p.iter().enumerate() {
                nonnegative(format!("instrumentation.noise.psd[{i}]"), *v)?;
            }
        }
        positive("instrumentation.filter.corner_hz", ins.filter.corner)?;
        if ins.filter.order == 0 || !ins.filter.order.is_multiple_of(2) {
            return Err(RunError::config("instrumentation.filter.order", "must be a positive even number"));
        }

        let gc = &self.gain;
        match (&gc.explicit_e, &gc.noise) {
            (Some(e), _) => {
                if e.len() != ins.measured.len() {
                    return Err(RunError::config(
                        "gain.explicit_e",
                        format!("{} values for {} channels", e.len(), ins.measured.len()),
                    ));
                }
                for (i, v) in e.iter().enumerate() {
                    nonnegative(format!("gain.explicit_e[{i}]"), *v)?;
                }
            }
            (None, None) => {
                return Err(RunError::config("gain.noise", "a noise model is required unless gain.explicit_e is given"))
            }
            (None, Some(_)) => {}
        }
        if let Some(nm) = &gc.noise {
            exactly_one(
                "gain.noise",
                ("process_psd_m2_per_s3", nm.process_psd_m2_per_s3.is_some()),
                ("process_from_ground_motion", nm.process_from_ground_motion == Some(true)),
            )?;
            if let Some(p) = &nm.process_psd_m2_per_s3 {
                if p.len() != 2 {
                    return Err(RunError::config("gain.noise.process_psd_m2_per_s3", "one value per ground component (x, y)"));
                }
                for (i, v) in p.iter().enumerate() {
                    nonnegative(format!("gain.noise.process_psd_m2_per_s3[{i}]"), *v)?;
                }
            }
            exactly_one(
                "gain.noise",
                ("measurement_psd", nm.measurement_psd.is_some()),
                ("measurement_weight", nm.measurement_weight.is_some()),
            )?;
            if let Some(p) = &nm.measurement_psd {
                if p.len() != ins.measured.len() {
                    return Err(RunError::config(
                        "gain.noise.measurement_psd",
                        format!("{} values for {} channels", p.len(), ins.measured.len()),
                    ));
                }
                for (i, v) in p.iter().enumerate() {
                    nonnegative(format!("gain.noise.measurement_psd[{i}]"), *v)?;
                }
            }
            if let Some(w) = nm.measurement_weight {
                positive("gain.noise.measurement_weight", w)?;
            }
        }
        let o = &gc.optimizer;
        if o.starts == 0 {
            return Err(RunError::config("gain.optimizer.starts", "must be >= 1"));
        }
        nonnegative("gain.optimizer.decades", o.decades)?;
        validate_simplex("gain.optimizer.simplex", &o.simplex)?;
        let gr = &gc.grid;
        if gr.log_points < 2 {
            return Err(RunError::config("gain.grid.log_points", "must be >= 2"));
        }
        positive("gain.grid.decades", gr.decades)?;
        if !(gr.span_factor.is_finite() && gr.span_factor > 1.0) {
            return Err(RunError::config("gain.grid.span_factor", "must be > 1"));
        }
        if !(gr.peak_halfwidth.is_finite() && gr.peak_halfwidth > 0.0 && gr.peak_halfwidth < 1.0) {
            return Err(RunError::config("gain.grid.peak_halfwidth", "must lie in (0, 1)"));
        }

        let it = &self.integrator;
        if let Some(dt) = it.dt_s {
            positive("integrator.dt_s", dt)?;
        }
        it.settings(1.0)
            .validate()
            .map_err(|e| RunError::config("integrator", e.to_string()))?;

        let d = &self.damage;
        d.beta.validate().map_err(|e| RunError::config("damage.beta", e.to_string()))?;
        for w in &b.walls {
            if !d.wall_types.contains_key(&w.wall_type) {
                return Err(RunError::config(
                    format!("damage.wall_types.{}", w.wall_type),
                    format!("missing; wall `{}` uses this type", w.id),
                ));
            }
        }
        for (name, t) in &d.wall_types {
            let path = format!("damage.wall_types.{name}");
            match t.delta_u_mm {
                None => return Err(RunError::config(format!("{path}.delta_u_mm"), "required (no default)")),
                Some(v) => positive(format!("{path}.delta_u_mm"), v)?,
            }
            match t.f_ey_kn {
                None => return Err(RunError::config(format!("{path}.f_ey_kn"), "required (no default)")),
                Some(v) => positive(format!("{path}.f_ey_kn"), v)?,
            }
            nonnegative(format!("{path}.x_ns_in"), t.x_ns_in)?;
            nonnegative(format!("{path}.x_wh"), t.x_wh)?;
        }

        let v = &self.verify;
        for (k, x) in [
            ("max_drift_error", v.max_drift_error),
            ("max_displacement_error", v.max_displacement_error),
            ("max_energy_error", v.max_energy_error),
            ("max_energy_audit", v.max_energy_audit),
        ] {
            nonnegative(format!("verify.{k}"), x)?;
        }
        if let Some(s) = v.wall_scale_probe {
            positive("verify.wall_scale_probe", s)?;
        }
        if self.outputs.directory.as_os_str().is_empty() {
            return Err(RunError::config("outputs.directory", "must not be empty"));
        }
        Ok(())
    }

    pub fn layout(&self) -> FloorLayout {
        FloorLayout {
            story_heights: self.building.story_heights_m.clone(),
        }
    }

    pub fn floor_masses(&self) -> Vec<FloorMass> {
        self.building
            .floors
            .iter()
            .map(|f| FloorMass {
                mass: f.mass_t,
                inertia: f.inertia_t_m2,
            })
            .collect()
    }

    /// Walls with their SAWS and damage parameters attached. Call after
    /// [`validate`](Self::validate).
    pub fn wall_placements(&self) -> Vec<WallPlacement> {
        self.building
            .walls
            .iter()
            .map(|w| {
                let dt = &self.damage.wall_types[&w.wall_type];
                WallPlacement {
                    id: w.id.clone(),
                    story: w.story,
                    origin: w.origin_m,
                    direction: w.direction,
                    params: self.building.wall_types[&w.wall_type].saws(),
                    damage: WallDamageParams {
                        delta_u: dt.delta_u_mm.unwrap_or(f64::NAN),
                        f_ey: dt.f_ey_kn.unwrap_or(f64::NAN),
                        x_ns: dt.x_ns_in,
                        x_wh: dt.x_wh,
                    },
                }
            })
            .collect()
    }

    /// Global DoF indices of the measured channels, in config order.
    pub fn measured_dofs(&self) -> Vec<usize> {
        self.instrumentation
            .measured
            .iter()
            .map(|m| (m.story - 1) * 3 + m.axis.offset())
            .collect()
    }
}

fn validate_simplex(path: &str, s: &NelderMeadSettings) -> Result<(), RunError> {
    if s.max_iterations == 0 {
        return Err(RunError::config(format!("{path}.max_iterations"), "must be >= 1"));
    }
    nonnegative(format!("{path}.x_tol"), s.x_tol)?;
    nonnegative(format!("{path}.f_rel_tol"), s.f_rel_tol)?;
    positive(format!("{path}.initial_step"), s.initial_step)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> String {
        crate::fixture::SIX_STORY_CONFIG.to_string()
    }

    fn err(text: &str) -> String {
        match parse(text) {
            Err(RunError::Config(m)) => m,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn bundled_fixture_parses() {
        let c = parse(&fixture()).unwrap();
        assert_eq!(c.building.walls.len(), 48);
        assert_eq!(c.measured_dofs(), vec![6, 7, 8, 15, 16, 17]);
    }

    #[test]
    fn empty_config_is_a_schema_error() {
        assert!(err("").contains("schema_version"));
    }

    #[test]
    fn wrong_schema_version() {
        let t = fixture().replace("schema_version = 1", "schema_version = 2");
        assert!(err(&t).contains("unsupported"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let t = fixture().replace("[ground_motion]", "[ground_motion]\nscael = 2.0");
        assert!(err(&t).contains("scael"));
    }

    #[test]
    fn missing_noise_model() {
        let c = parse(&fixture()).unwrap();
        let mut c2 = c.clone();
        c2.gain.noise = None;
        c2.gain.explicit_e = None;
        let m = format!("{}", c2.validate().unwrap_err());
        assert!(m.contains("gain.noise"), "{m}");
        c2.gain.explicit_e = Some(vec![1.0; 6]);
        c2.validate().unwrap();
    }

    #[test]
    fn missing_f_ey_names_the_key() {
        let mut c = parse(&fixture()).unwrap();
        let first = c.damage.wall_types.keys().next().unwrap().clone();
        c.damage.wall_types.get_mut(&first).unwrap().f_ey_kn = None;
        let m = format!("{}", c.validate().unwrap_err());
        assert!(m.contains(&format!("damage.wall_types.{first}.f_ey_kn")), "{m}");
    }

    #[test]
    fn errors_carry_key_paths() {
        let mut c = parse(&fixture()).unwrap();
        c.building.walls[5].story = 9;
        assert!(format!("{}", c.validate().unwrap_err()).contains("building.walls[5].story"));
        let mut c = parse(&fixture()).unwrap();
        c.building.walls[2].direction = [1.0, 1.0];
        assert!(format!("{}", c.validate().unwrap_err()).contains("building.walls[2].direction"));
        let mut c = parse(&fixture()).unwrap();
        c.instrumentation.noise.psd = Some(vec![0.0; 6]);
        assert!(format!("{}", c.validate().unwrap_err()).contains("instrumentation.noise"));
        let mut c = parse(&fixture()).unwrap();
        c.building.floors[1].mass_t = -1.0;
        assert!(format!("{}", c.validate().unwrap_err()).contains("building.floors[1].mass_t"));
    }

    #[test]
    fn round_trips_through_toml() {
        let c = parse(&fixture()).unwrap();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(parse(&text).unwrap(), c);
    }
}
