//! Stages of an experiment: simulate, gain, observe, damage, verify.
//!
//! Stages communicate only through files in the output directory, so
//! `verify` produces the same data files as running the four stages one
//! after another.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::Instant;

use embo_core::damage::{damage_report, wall_damage, DamageReport};
use embo_core::dynamics::{observe, simulate, IntegratorSettings, ObserverConfig, ResponseHistory};
use embo_core::gain::{optimize_gain, FrequencyGrid, GainProblem, GainResult, NoiseModel};
use embo_core::signal::{accel_to_velocity, add_noise, resample, Channel, Record, Unit};
use embo_core::structure::{linear_stiffness, modal_frequencies, rayleigh_damping, BuildingModel, ProcessNoiseInfluence, RayleighTargets};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{self, ExperimentConfig, LoadedConfig};
use crate::error::RunError;
use crate::io;
use crate::report::{self, Comparison};

pub const TRUTH: &str = "truth";
pub const ESTIMATE: &str = "estimate";
pub const GROUND: &str = "ground_motion.csv";
pub const MEASUREMENTS: &str = "measurements.csv";
pub const FEEDBACK: &str = "feedback.csv";
pub const GAIN: &str = "gain.json";
pub const SIMULATE_SUMMARY: &str = "simulate.json";
pub const OBSERVE_SUMMARY: &str = "observe.json";
pub const STORY_ERRORS: &str = "story_errors.csv";
pub const WALL_ERRORS: &str = "wall_errors.csv";
pub const OVERLAY: &str = "hysteresis_overlay.csv";
pub const DRIFT_SVG: &str = "drift_profile.svg";
pub const DAMAGE_JSON: &str = "damage.json";
pub const DAMAGE_CSV: &str = "damage.csv";
pub const DAMAGE_BARS: &str = "damage_bars.csv";
pub const DAMAGE_SVG: &str = "damage.svg";
pub const VERIFY: &str = "verify.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Simulate,
    Gain,
    Observe,
    Damage,
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Gain => "gain",
            Command::Observe => "observe",
            Command::Damage => "damage",
            Command::Verify => "verify",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Replaces `outputs.directory`.
    pub out: Option<PathBuf>,
    /// Replaces `seeds.measurement_noise`.
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    /// `ok`, `warning` or `failed`.
    pub status: String,
    pub seconds: f64,
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    /// Relative to the output directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Written as `<command>.manifest.json`. The only output carrying
/// timings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: Command,
    pub config_sha256: String,
    pub seeds: config::SeedConfig,
    pub threads: Option<usize>,
    pub status: String,
    pub error: Option<String>,
    pub stages: Vec<StageRecord>,
    pub outputs: Vec<OutputRecord>,
}

pub fn manifest_name(command: Command) -> String {
    format!("{}.manifest.json", command.name())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub steps: usize,
    pub dt_s: f64,
    pub bisections: usize,
    /// Largest ledger imbalance relative to the input energy so far.
    pub energy_audit: f64,
    pub peak_wall_drift_mm: f64,
    pub channels: Vec<String>,
    /// Acceleration noise PSD actually added, per channel.
    pub noise_psd: Vec<f64>,
    pub noise_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignNoise {
    pub s_ww_diagonal: Vec<f64>,
    pub s_vv_diagonal: Vec<f64>,
    pub fundamental_rad_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainFile {
    /// `optimized` or `explicit`.
    pub source: String,
    pub channels: Vec<String>,
    pub measured_dofs: Vec<usize>,
    pub e_diagonal: Vec<f64>,
    pub design_noise: Option<DesignNoise>,
    pub optimization: Option<GainResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserveSummary {
    pub steps: usize,
    pub e_diagonal: Vec<f64>,
    pub bisections: usize,
    /// Present when truth traces exist in the output directory.
    pub comparison: Option<Comparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub wall_scale: f64,
    /// Set when the mis-scaled observer run itself failed.
    pub error: Option<String>,
    pub worst_unmeasured_drift_error: Option<f64>,
    pub worst_unmeasured_displacement_error: Option<f64>,
    pub worst_wall_energy_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifySummary {
    pub passed: bool,
    pub checks: Vec<Check>,
    pub worst_unmeasured_drift_error: f64,
    pub worst_unmeasured_displacement_error: f64,
    pub worst_wall_energy_error: f64,
    pub max_estimated_di: f64,
    pub max_true_di: f64,
    pub probe: Option<ProbeResult>,
}

/// A loaded experiment plus bookkeeping for one command.
pub struct Session {
    pub loaded: LoadedConfig,
    pub out_dir: PathBuf,
    pub model: BuildingModel,
    pub settings: IntegratorSettings,
    /// Ground acceleration on the integrator grid, components x rows.
    pub ground: Record,
    pub seed: u64,
    pub threads: Option<usize>,
    stages: Vec<StageRecord>,
    outputs: Vec<OutputRecord>,
}

impl Session {
    pub fn open(config_path: &Path, opts: &RunOptions) -> Result<Session, RunError> {
        let loaded = config::load(config_path)?;
        Self::from_loaded(loaded, opts)
    }

    pub fn from_loaded(loaded: LoadedConfig, opts: &RunOptions) -> Result<Session, RunError> {
        let cfg = &loaded.config;
        let out_dir = opts.out.clone().unwrap_or_else(|| loaded.output_dir());
        let model = build_model(cfg)?;
        let gm_path = loaded.ground_motion_path();
        let raw = io::read_record(&gm_path)?;
        let settings = cfg.integrator.settings(raw.dt);
        settings
            .validate()
            .map_err(|e| RunError::config("integrator", e.to_string()))?;
        let ground = ground_on_grid(&raw, cfg, &gm_path, settings.dt)?;
        let seed = opts.seed.unwrap_or(cfg.seeds.measurement_noise);
        Ok(Session {
            loaded,
            out_dir,
            model,
            settings,
            ground,
            seed,
            threads: opts.threads,
            stages: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.loaded.config
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), RunError> {
        io::write_file(&self.path(name), bytes)?;
        self.outputs.retain(|o| o.path != name);
        self.outputs.push(OutputRecord {
            path: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    fn write_record(&mut self, name: &str, rec: &Record) -> Result<(), RunError> {
        self.write(name, &io::record_csv_bytes(rec))?;
        let side = format!("{name}.meta.json");
        self.write(&side, &io::to_json(&io::record_sidecar(rec)))
    }

    fn write_history(&mut self, stem: &str, h: &ResponseHistory) -> Result<(), RunError> {
        let ids = self.wall_ids();
        let out = self.config().outputs.clone();
        // later stages read the binary file
        self.write(&format!("{stem}.bin"), &io::history_binary_bytes(h, &ids))?;
        if out.history_csv {
            self.write(&format!("{stem}.csv"), &io::history_csv_bytes(h, &ids))?;
        }
        Ok(())
    }

    fn read_history(&self, stem: &str) -> Result<ResponseHistory, RunError> {
        let path = self.path(&format!("{stem}.bin"));
        let stored = io::read_history_binary(&path)?;
        if stored.wall_ids != self.wall_ids() || stored.history.n_dof() != self.model.n_dof() {
            return Err(RunError::format(&path, "history does not belong to this building model"));
        }
        Ok(stored.history)
    }

    pub fn wall_ids(&self) -> Vec<String> {
        self.model.walls.iter().map(|w| w.id.clone()).collect()
    }

    pub fn channel_names(&self) -> Vec<String> {
        self.config().instrumentation.measured.iter().map(|m| m.channel_name()).collect()
    }

    fn measured_stories(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.config().instrumentation.measured.iter().map(|m| m.story).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    fn ground_matrix(&self) -> DMatrix<f64> {
        self.ground.to_matrix()
    }

    fn timed<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<(T, Option<String>), RunError>) -> Result<T, RunError> {
        let t0 = Instant::now();
        let r = f(self);
        let seconds = t0.elapsed().as_secs_f64();
        match r {
            Ok((v, warning)) => {
                self.stages.push(StageRecord {
                    name: name.to_string(),
                    status: if warning.is_some() { "warning" } else { "ok" }.to_string(),
                    seconds,
                    message: warning,
                });
                Ok(v)
            }
            Err(e) => {
                self.stages.push(StageRecord {
                    name: name.to_string(),
                    status: "failed".to_string(),
                    seconds,
                    message: Some(e.to_string()),
                });
                Err(e)
            }
        }
    }

    /// Truth run, then noisy acceleration records at the measured DoFs.
    pub fn simulate(&mut self) -> Result<SimulateSummary, RunError> {
        self.timed("simulate", |s| {
            let ug = s.ground_matrix();
            let truth = simulate(&s.model, &ug, &s.settings).map_err(RunError::stage("simulate"))?;
            let ground = s.ground.clone();
            s.write_record(GROUND, &ground)?;
            s.write_history(TRUTH, &truth)?;

            let dofs = s.config().measured_dofs();
            let names = s.channel_names();
            let channels: Vec<Channel> = dofs
                .iter()
                .zip(&names)
                .map(|(&d, name)| Channel {
                    name: name.clone(),
                    unit: if d % 3 == 2 { Unit::AngularAcceleration } else { Unit::Acceleration },
                    samples: truth.ddq.row(d).iter().copied().collect(),
                })
                .collect();
            let clean = Record::new(0.0, s.settings.dt, channels).map_err(RunError::stage("simulate"))?;
            let psd = match (&s.config().instrumentation.noise.rms_fraction, &s.config().instrumentation.noise.psd) {
                (_, Some(p)) => p.clone(),
                (Some(frac), None) => clean
                    .channels
                    .iter()
                    .map(|c| {
                        let ms = c.samples.iter().map(|x| x * x).sum::<f64>() / c.samples.len().max(1) as f64;
                        frac * frac * ms * clean.dt / (2.0 * PI)
                    })
                    .collect(),
                (None, None) => unreachable!("validated"),
            };
            let mut noisy = add_noise(&clean, &psd, s.seed).map_err(RunError::stage("simulate"))?;
            noisy.meta.insert("content".into(), "relative floor accelerations with synthetic sensor noise".into());
            noisy.meta.insert("noise_psd".into(), serde_json::to_string(&psd).expect("floats serialize"));
            noisy.meta.insert("noise_seed".into(), s.seed.to_string());
            s.write_record(MEASUREMENTS, &noisy)?;

            let summary = SimulateSummary {
                steps: truth.steps(),
                dt_s: s.settings.dt,
                bisections: truth.bisections,
                energy_audit: truth.energy.max_relative_error(),
                peak_wall_drift_mm: truth.wall_drifts.amax(),
                channels: names,
                noise_psd: psd,
                noise_seed: s.seed,
            };
            s.write(SIMULATE_SUMMARY, &io::to_json(&summary))?;
            let warn = (truth.bisections > 0).then(|| format!("{} local step halvings", truth.bisections));
            Ok((summary, warn))
        })
    }

    /// Optimized (or explicit) feedback gain.
    pub fn gain(&mut self) -> Result<GainFile, RunError> {
        self.timed("gain", |s| {
            let dofs = s.config().measured_dofs();
            let channels = s.channel_names();
            if let Some(e) = s.config().gain.explicit_e.clone() {
                let file = GainFile {
                    source: "explicit".into(),
                    channels,
                    measured_dofs: dofs,
                    e_diagonal: e,
                    design_noise: None,
                    optimization: None,
                };
                s.write(GAIN, &io::to_json(&file))?;
                return Ok((file, Some("explicit gain given; optimization skipped".into())));
            }
            let problem = GainProblem::from_model(&s.model, dofs.clone()).map_err(RunError::stage("gain"))?;
            let noise = s.design_noise(&problem)?;
            let gc = s.config().gain.clone();
            let grid = FrequencyGrid::for_problem(&problem, &gc.grid).map_err(RunError::stage("gain"))?;
            let model_noise = NoiseModel {
                s_ww: DMatrix::from_diagonal(&DVector::from_vec(noise.s_ww_diagonal.clone())),
                s_vv: DMatrix::from_diagonal(&DVector::from_vec(noise.s_vv_diagonal.clone())),
            };
            let result = optimize_gain(&problem, &model_noise, &grid, &gc.optimizer).map_err(RunError::stage("gain"))?;
            let mut warn = None;
            if result.diagnostics.stagnated {
                warn = Some("optimizer stagnated; best point found is written".to_string());
            }
            if result.diagnostics.zero_gain_selected {
                warn = Some("E = 0 beat every simplex result".to_string());
            }
            let file = GainFile {
                source: "optimized".into(),
                channels,
                measured_dofs: dofs,
                e_diagonal: result.e_diagonal.clone(),
                design_noise: Some(noise),
                optimization: Some(result),
            };
            s.write(GAIN, &io::to_json(&file))?;
            Ok((file, warn))
        })
    }

    fn design_noise(&self, problem: &GainProblem) -> Result<DesignNoise, RunError> {
        let nc = self.config().gain.noise.clone().expect("validated: noise model present");
        let s_ww = match nc.process_psd_m2_per_s3 {
            Some(p) => p,
            None => {
                let ug = self.ground_matrix();
                (0..ug.nrows())
                    .map(|r| {
                        let ms = ug.row(r).iter().map(|x| x * x).sum::<f64>() / ug.ncols().max(1) as f64;
                        ms * self.settings.dt / (2.0 * PI)
                    })
                    .collect()
            }
        };
        if s_ww.len() != problem.noise_inputs() {
            return Err(RunError::config(
                "gain.noise",
                format!("{} process PSD values for {} noise inputs", s_ww.len(), problem.noise_inputs()),
            ));
        }
        let k0 = linear_stiffness(&self.model).map_err(RunError::stage("gain"))?.matrix;
        let w1 = modal_frequencies(&self.model.mass, &k0).map_err(RunError::stage("gain"))?[0];
        let s_vv = match (nc.measurement_psd, nc.measurement_weight) {
            (Some(p), _) => p,
            (None, Some(weight)) => self
                .acceleration_noise_psd()?
                .iter()
                .map(|s| weight * s / (w1 * w1))
                .collect(),
            (None, None) => unreachable!("validated"),
        };
        Ok(DesignNoise {
            s_ww_diagonal: s_ww,
            s_vv_diagonal: s_vv,
            fundamental_rad_s: w1,
        })
    }

    /// Channel noise PSDs from the config, or recorded by `simulate`.
    fn acceleration_noise_psd(&self) -> Result<Vec<f64>, RunError> {
        if let Some(p) = &self.config().instrumentation.noise.psd {
            return Ok(p.clone());
        }
        let side = io::sidecar_path(&self.path(MEASUREMENTS));
        if !side.exists() {
            return Err(RunError::format(
                &side,
                "gain.noise.measurement_weight with instrumentation.noise.rms_fraction needs the noise record written by `simulate`",
            ));
        }
        let meta: io::RecordSidecar = io::read_json(&side)?;
        let raw = meta
            .meta
            .get("noise_psd")
            .ok_or_else(|| RunError::format(&side, "no `noise_psd` entry"))?;
        let psd: Vec<f64> = serde_json::from_str(raw).map_err(|e| RunError::format(&side, e.to_string()))?;
        if psd.len() != self.config().instrumentation.measured.len() {
            return Err(RunError::format(&side, "noise_psd length does not match the instrumentation"));
        }
        Ok(psd)
    }

    /// Velocity feedback from the measurement record, validated against
    /// the instrumentation.
    fn feedback(&self) -> Result<Record, RunError> {
        let path = self.path(MEASUREMENTS);
        let rec = io::read_record(&path)?;
        let names = self.channel_names();
        let found: Vec<&str> = rec.channels.iter().map(|c| c.name.as_str()).collect();
        if found != names.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(RunError::format(
                &path,
                format!("channels {found:?} do not match instrumentation {names:?}"),
            ));
        }
        let filter = self.config().instrumentation.filter;
        let mut vel = accel_to_velocity(&rec, &filter).map_err(RunError::stage("observe"))?;
        if (vel.dt - self.settings.dt).abs() > 1e-12 * self.settings.dt {
            vel = resample(&vel, self.settings.dt).map_err(RunError::stage("observe"))?;
        }
        vel.meta.insert("content".into(), "velocity feedback".into());
        Ok(vel)
    }

    fn gains(&self) -> Result<Vec<f64>, RunError> {
        let path = self.path(GAIN);
        if path.exists() {
            let g: GainFile = io::read_json(&path)?;
            if g.measured_dofs != self.config().measured_dofs() {
                return Err(RunError::format(&path, "measured DoFs differ from the instrumentation"));
            }
            return Ok(g.e_diagonal);
        }
        match &self.config().gain.explicit_e {
            Some(e) => Ok(e.clone()),
            None => Err(RunError::format(&path, "no gain record; run `gain` first")),
        }
    }

    pub fn observer_config(&self) -> Result<ObserverConfig, RunError> {
        ObserverConfig::new(self.config().measured_dofs(), self.gains()?, self.model.n_dof()).map_err(RunError::stage("observe"))
    }

    /// Observer run, plus comparison tables when truth traces exist.
    pub fn observe(&mut self) -> Result<ObserveSummary, RunError> {
        self.timed("observe", |s| {
            let vel = s.feedback()?;
            let obs = s.observer_config()?;
            let est = observe(&s.model, &obs, &vel.to_matrix(), &s.settings).map_err(RunError::stage("observe"))?;
            s.write_record(FEEDBACK, &vel)?;
            s.write_history(ESTIMATE, &est)?;
            let comparison = if s.path(&format!("{TRUTH}.bin")).exists() {
                let truth = s.read_history(TRUTH)?;
                let c = report::compare(&s.model, &truth, &est, &s.measured_stories());
                s.write(STORY_ERRORS, &report::story_errors_csv(&c))?;
                s.write(WALL_ERRORS, &report::wall_errors_csv(&c))?;
                s.write(OVERLAY, &report::hysteresis_overlay_csv(&s.model, &truth, &est))?;
                if s.config().outputs.svg {
                    s.write(DRIFT_SVG, report::drift_profile_svg(&c).as_bytes())?;
                }
                Some(c)
            } else {
                None
            };
            let summary = ObserveSummary {
                steps: est.steps(),
                e_diagonal: obs.gains.clone(),
                bisections: est.bisections,
                comparison,
            };
            s.write(OBSERVE_SUMMARY, &io::to_json(&summary))?;
            Ok((summary, None))
        })
    }

    pub fn damage_of(&self, stem: &str) -> Result<DamageReport, RunError> {
        let h = self.read_history(stem)?;
        let beta = self.config().damage.beta;
        let results = wall_damage(&self.model, &h, &beta).map_err(RunError::stage("damage"))?;
        damage_report(&results, self.model.layout.n_stories(), &beta).map_err(RunError::stage("damage"))
    }

    /// Damage indices from the estimated response.
    pub fn damage(&mut self) -> Result<DamageReport, RunError> {
        self.timed("damage", |s| {
            let report = s.damage_of(ESTIMATE)?;
            s.write(DAMAGE_JSON, &io::to_json(&report))?;
            s.write(DAMAGE_CSV, &report::damage_csv(&report))?;
            s.write(DAMAGE_BARS, &report::damage_bars_csv(&report, &s.model))?;
            if s.config().outputs.svg {
                s.write(DAMAGE_SVG, report::damage_svg(&report, &s.model).as_bytes())?;
            }
            let warn = report
                .building
                .collapse_range_walls
                .gt(&0)
                .then(|| format!("{} walls in the collapse range (DI > 1)", report.building.collapse_range_walls));
            Ok((report, warn))
        })
    }

    /// All four stages, then the configured thresholds.
    pub fn verify(&mut self) -> Result<VerifySummary, RunError> {
        let sim = self.simulate()?;
        self.gain()?;
        let obs = self.observe()?;
        let est_damage = self.damage()?;
        self.timed("verify", |s| {
            let v = s.config().verify;
            let c = obs.comparison.clone().expect("truth written by simulate");
            let mut checks = vec![
                check("energy_audit", sim.energy_audit, v.max_energy_audit),
                check("unmeasured_peak_drift", c.worst_unmeasured_drift_error, v.max_drift_error),
                check("unmeasured_peak_displacement", c.worst_unmeasured_displacement_error, v.max_displacement_error),
                check("wall_energy", c.worst_wall_energy_error, v.max_energy_error),
            ];
            checks.retain(|c| c.threshold.is_finite());
            let truth_damage = s.damage_of(TRUTH)?;
            let probe = match v.wall_scale_probe {
                Some(scale) => Some(s.probe(scale)?),
                None => None,
            };
            let passed = checks.iter().all(|c| c.pass);
            let summary = VerifySummary {
                passed,
                checks,
                worst_unmeasured_drift_error: c.worst_unmeasured_drift_error,
                worst_unmeasured_displacement_error: c.worst_unmeasured_displacement_error,
                worst_wall_energy_error: c.worst_wall_energy_error,
                max_estimated_di: est_damage.building.max_di,
                max_true_di: truth_damage.building.max_di,
                probe,
            };
            s.write(VERIFY, &io::to_json(&summary))?;
            Ok((summary, None))
        })
    }

    /// Observer built on a model whose walls are all scaled by `scale`,
    /// fed the same measurements. Failures are reported, not raised.
    fn probe(&self, scale: f64) -> Result<ProbeResult, RunError> {
        let truth = self.read_history(TRUTH)?;
        let vel = self.feedback()?;
        let obs = self.observer_config()?;
        let run = self
            .model
            .with_scaled_walls(scale)
            .and_then(|m| observe(&m, &obs, &vel.to_matrix(), &self.settings));
        Ok(match run {
            Ok(est) => {
                let c = report::compare(&self.model, &truth, &est, &self.measured_stories());
                ProbeResult {
                    wall_scale: scale,
                    error: None,
                    worst_unmeasured_drift_error: Some(c.worst_unmeasured_drift_error),
                    worst_unmeasured_displacement_error: Some(c.worst_unmeasured_displacement_error),
                    worst_wall_energy_error: Some(c.worst_wall_energy_error),
                }
            }
            Err(e) => ProbeResult {
                wall_scale: scale,
                error: Some(e.to_string()),
                worst_unmeasured_drift_error: None,
                worst_unmeasured_displacement_error: None,
                worst_wall_energy_error: None,
            },
        })
    }

    pub fn manifest(&self, command: Command, error: Option<&RunError>) -> RunManifest {
        let status = match error {
            None => "ok",
            Some(RunError::Verification(_)) => "verification_failed",
            Some(_) => "failed",
        };
        RunManifest {
            tool: "embo".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command,
            config_sha256: sha256_hex(self.loaded.text.as_bytes()),
            seeds: config::SeedConfig { measurement_noise: self.seed },
            threads: self.threads,
            status: status.into(),
            error: error.map(|e| e.to_string()),
            stages: self.stages.clone(),
            outputs: self.outputs.clone(),
        }
    }

    pub fn write_manifest(&self, command: Command, error: Option<&RunError>) -> Result<PathBuf, RunError> {
        let path = self.path(&manifest_name(command));
        io::write_file(&path, &io::to_json(&self.manifest(command, error)))?;
        Ok(path)
    }
}

fn check(name: &str, value: f64, threshold: f64) -> Check {
    Check {
        name: name.into(),
        value,
        threshold,
        pass: value <= threshold,
    }
}

/// Builds the structural model, resolving modal damping anchors on the
/// initial-stiffness model.
pub fn build_model(cfg: &ExperimentConfig) -> Result<BuildingModel, RunError> {
    let stage = RunError::stage;
    let anchors = &cfg.building.damping.anchors;
    let mut model = BuildingModel::new(
        cfg.layout(),
        &cfg.floor_masses(),
        cfg.wall_placements(),
        RayleighTargets {
            first: (1.0, 0.0),
            second: (2.0, 0.0),
        },
        ProcessNoiseInfluence::GroundMotion,
    )
    .map_err(stage("model"))?;
    let k0 = linear_stiffness(&model).map_err(stage("model"))?;
    if !k0.unrestrained.is_empty() {
        return Err(RunError::config(
            "building.walls",
            format!("no wall restrains DoFs {:?}", k0.unrestrained.iter().map(|&d| io::dof_name(d)).collect::<Vec<_>>()),
        ));
    }
    let modes = modal_frequencies(&model.mass, &k0.matrix).map_err(stage("model"))?;
    let omega = |a: &config::DampingAnchor| a.omega_rad_s.unwrap_or_else(|| modes[a.mode.expect("validated") - 1]);
    let targets = RayleighTargets {
        first: (omega(&anchors[0]), anchors[0].ratio),
        second: (omega(&anchors[1]), anchors[1].ratio),
    };
    model.damping = rayleigh_damping(&model.mass, &k0.matrix, targets)
        .map_err(|e| RunError::config("building.damping.anchors", e.to_string()))?;
    Ok(model)
}

/// Scaled x/y ground components on the integrator grid.
fn ground_on_grid(raw: &Record, cfg: &ExperimentConfig, path: &Path, dt: f64) -> Result<Record, RunError> {
    let gm = &cfg.ground_motion;
    let mut channels = Vec::new();
    for (i, name) in gm.channels.iter().enumerate() {
        let c = raw.channel(name).ok_or_else(|| {
            RunError::format(path, format!("no channel `{name}` (ground_motion.channels[{i}])"))
        })?;
        if c.unit != Unit::Acceleration {
            return Err(RunError::format(path, format!("channel `{name}` must be in m/s^2, found {}", c.unit)));
        }
        channels.push(Channel {
            name: ["ug_x", "ug_y"][i].to_string(),
            unit: Unit::Acceleration,
            samples: c.samples.iter().map(|x| x * gm.scale).collect(),
        });
    }
    let mut rec = Record::new(0.0, raw.dt, channels).map_err(|e| RunError::format(path, e.to_string()))?;
    rec.meta = raw.meta.clone();
    if (raw.dt - dt).abs() > 1e-12 * dt {
        rec = resample(&rec, dt).map_err(|e| RunError::config("integrator.dt_s", e.to_string()))?;
    }
    rec.meta.insert("scale".into(), io::fmt_f64(gm.scale));
    Ok(rec)
}

/// Runs one command and always leaves a manifest behind once the
/// config has loaded.
pub fn run(command: Command, config_path: &Path, opts: &RunOptions) -> Result<Session, RunError> {
    let mut session = Session::open(config_path, opts)?;
    let result = match command {
        Command::Simulate => session.simulate().map(|_| ()),
        Command::Gain => session.gain().map(|_| ()),
        Command::Observe => session.observe().map(|_| ()),
        Command::Damage => session.damage().map(|_| ()),
        Command::Verify => session.verify().and_then(|v| {
            if v.passed {
                Ok(())
            } else {
                let failed: Vec<String> = v
                    .checks
                    .iter()
                    .filter(|c| !c.pass)
                    .map(|c| format!("{} = {:.4} > {}", c.name, c.value, c.threshold))
                    .collect();
                Err(RunError::Verification(failed.join("; ")))
            }
        }),
    };
    session.write_manifest(command, result.as_ref().err())?;
    result.map(|_| session)
}
