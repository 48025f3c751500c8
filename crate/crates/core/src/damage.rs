//! Park-Ang low-cycle cumulative damage index per wall, with story and
//! building aggregates.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dynamics::{drift_histories, ResponseHistory};
use crate::error::{Error, Result};
use crate::hysteresis::{unloading_stiffness, DissipationMeter, WallDamageParams};
use crate::structure::BuildingModel;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Regression coefficients of the energy weight
/// `psi = b0 + b1 x_ns^2 + b2 x_ns^2 x_wh`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsiCoefficients {
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for PsiCoefficients {
    fn default() -> Self {
        PsiCoefficients {
            beta0: 1.121,
            beta1: 0.014,
            beta2: 0.026,
        }
    }
}

impl PsiCoefficients {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("beta0", self.beta0), ("beta1", self.beta1), ("beta2", self.beta2)] {
            if !v.is_finite() {
                return Err(Error::invalid(field, "must be finite"));
            }
        }
        Ok(())
    }
}

/// `x_ns` is the nail spacing (in), `x_wh` the width-to-height ratio.
pub fn psi(beta: &PsiCoefficients, x_ns: f64, x_wh: f64) -> f64 {
    let x2 = x_ns * x_ns;
    beta.beta0 + beta.beta1 * x2 + beta.beta2 * x2 * x_wh
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DamageIndexResult {
    pub wall_id: String,
    pub story: usize,
    /// Peak absolute drift (mm).
    pub delta_m: f64,
    /// Dissipated hysteretic energy (kN mm).
    pub e_hyst_total: f64,
    pub psi: f64,
    pub di: f64,
    /// `di > 1`.
    pub collapse_range: bool,
}

/// `DI = delta_m / delta_u + psi e / (f_ey delta_u)`.
pub fn damage_index_from_parts(delta_m: f64, e_hyst_total: f64, dp: &WallDamageParams, beta: &PsiCoefficients) -> (f64, f64) {
    let psi = psi(beta, dp.x_ns, dp.x_wh);
    let di = delta_m / dp.delta_u + psi * e_hyst_total / (dp.f_ey * dp.delta_u);
    (psi, di)
}

/// Damage index of one wall from time-aligned drift (mm) and force (kN)
/// traces. Energy is the trapezoidal work with the recoverable part
/// `f^2 / (2 k)` removed; `k = inf` counts all work.
pub fn damage_index(
    wall_id: &str,
    story: usize,
    drift: &[f64],
    force: &[f64],
    dp: &WallDamageParams,
    beta: &PsiCoefficients,
    recoverable_stiffness: f64,
) -> Result<DamageIndexResult> {
    if drift.is_empty() {
        return Err(Error::EmptyTrace);
    }
    if drift.len() != force.len() {
        return Err(Error::DimensionMismatch {
            what: "force trace",
            expected: drift.len(),
            found: force.len(),
        });
    }
    dp.validate()?;
    let mut meter = DissipationMeter::new(recoverable_stiffness);
    let mut delta_m: f64 = 0.0;
    for (&d, &f) in drift.iter().zip(force) {
        meter.push(d, f);
        delta_m = delta_m.max(d.abs());
    }
    let e = meter.dissipated();
    let (psi, di) = damage_index_from_parts(delta_m, e, dp, beta);
    Ok(DamageIndexResult {
        wall_id: wall_id.into(),
        story,
        delta_m,
        e_hyst_total: e,
        psi,
        di,
        collapse_range: di > 1.0,
    })
}

/// Damage indices for every wall of `model` from a response history.
pub fn wall_damage(model: &BuildingModel, history: &ResponseHistory, beta: &PsiCoefficients) -> Result<Vec<DamageIndexResult>> {
    if history.steps() == 0 {
        return Err(Error::EmptyTrace);
    }
    let traces = drift_histories(history, model)?;
    traces
        .iter()
        .map(|t| {
            let wall = &model.walls[t.wall];
            let k = unloading_stiffness(&wall.params);
            damage_index(&wall.id, wall.story, &t.drift, &t.force, &wall.damage, beta, k)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoryDamage {
    pub story: usize,
    pub walls: usize,
    pub max_di: f64,
    pub mean_di: f64,
    /// Wall with the largest index, if the story has walls.
    pub worst_wall: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingDamage {
    pub walls: usize,
    pub max_di: f64,
    pub mean_di: f64,
    pub collapse_range_walls: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DamageReport {
    pub schema_version: u32,
    pub coefficients: PsiCoefficients,
    /// Sorted by descending index, then wall id.
    pub walls: Vec<DamageIndexResult>,
    pub stories: Vec<StoryDamage>,
    pub building: BuildingDamage,
}

pub fn damage_report(results: &[DamageIndexResult], n_stories: usize, beta: &PsiCoefficients) -> Result<DamageReport> {
    for r in results {
        if r.story == 0 || r.story > n_stories {
            return Err(Error::StoryOutOfRange {
                wall: r.wall_id.clone(),
                story: r.story,
                n_stories,
            });
        }
    }
    let mut walls = results.to_vec();
    walls.sort_by(|a, b| b.di.total_cmp(&a.di).then_with(|| a.wall_id.cmp(&b.wall_id)));

    let stories = (1..=n_stories)
        .map(|s| {
            let mut count = 0;
            let mut sum = 0.0;
            let mut max = 0.0;
            let mut worst: Option<&DamageIndexResult> = None;
            for r in results.iter().filter(|r| r.story == s) {
                count += 1;
                sum += r.di;
                if worst.is_none_or(|w| r.di > w.di) {
                    worst = Some(r);
                    max = r.di;
                }
            }
            StoryDamage {
                story: s,
                walls: count,
                max_di: max,
                mean_di: if count > 0 { sum / count as f64 } else { 0.0 },
                worst_wall: worst.map(|w| w.wall_id.clone()),
            }
        })
        .collect();

    let n = results.len();
    let building = BuildingDamage {
        walls: n,
        max_di: results.iter().map(|r| r.di).fold(0.0, f64::max),
        mean_di: if n > 0 {
            results.iter().map(|r| r.di).sum::<f64>() / n as f64
        } else {
            0.0
        },
        collapse_range_walls: results.iter().filter(|r| r.collapse_range).count(),
    };
    Ok(DamageReport {
        schema_version: REPORT_SCHEMA_VERSION,
        coefficients: *beta,
        walls,
        stories,
        building,
    })
}
