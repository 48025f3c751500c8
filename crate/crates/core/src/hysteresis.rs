//! SAWS (CUREE) 10-parameter pinching hysteresis for a single shear wall.
//!
//! Drifts are in mm, forces in kN, stiffnesses in kN/mm.
//!
//! The backbone is the exponential CUREE envelope
//!
//! ```text
//! F(d) = sgn(d) (F0 + R1 S0 |d|) (1 - exp(-S0 |d| / F0))     |d| <= DU
//! F(d) = sgn(d) max(0, Fu + R2 S0 (|d| - DU))                 |d| >  DU
//! ```
//!
//! Cyclic behaviour is expressed as a path function of the most recent load
//! reversal and the two historic excursion extremes. Moving in the positive
//! direction from a reversal point `(dr, fr)` the force is
//!
//! ```text
//! f(d) = min(U(d), max(C+(d), C-(d)))
//! ```
//!
//! where `U` is the unloading line of slope `R3 S0` through the reversal, `C+`
//! is the reloading curve towards the positive extreme (pinching line through
//! the intercept `FI` with slope `R4 S0`, then a degraded reloading line with
//! slope `S0 (F0 / (S0 BETA dmax))^ALPHA` into the backbone point at `dmax`,
//! then the backbone), and `C-` is the mirror image for the negative side.
//! Moving in the negative direction is the exact mirror. Because every branch
//! slope is bounded by the unloading slope, the current point always lies
//! between the two curves, so the force is continuous across reversals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The ten SAWS parameters of one wall.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SawsParameters {
    /// Backbone force intercept (kN).
    #[serde(rename = "f0_kn")]
    pub f0: f64,
    /// Pinching-path force intercept (kN).
    #[serde(rename = "fi_kn")]
    pub fi: f64,
    /// Drift at peak backbone force (mm).
    #[serde(rename = "du_mm")]
    pub du: f64,
    /// Initial stiffness (kN/mm).
    #[serde(rename = "s0_kn_per_mm")]
    pub s0: f64,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub r4: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl SawsParameters {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("f0", self.f0),
            ("fi", self.fi),
            ("du", self.du),
            ("s0", self.s0),
            ("r1", self.r1),
            ("r2", self.r2),
            ("r3", self.r3),
            ("r4", self.r4),
            ("alpha", self.alpha),
            ("beta", self.beta),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::invalid(name, "must be finite"));
            }
        }
        let positive = [
            ("f0", self.f0),
            ("du", self.du),
            ("s0", self.s0),
            ("r3", self.r3),
            ("r4", self.r4),
            ("alpha", self.alpha),
            ("beta", self.beta),
        ];
        for (name, v) in positive {
            if v <= 0.0 {
                return Err(Error::invalid(name, "must be > 0"));
            }
        }
        if self.fi < 0.0 {
            return Err(Error::invalid("fi", "must be >= 0"));
        }
        if !(self.r1 > 0.0 && self.r1 < 1.0) {
            return Err(Error::invalid("r1", "must lie in (0, 1)"));
        }
        if self.r2 >= 0.0 {
            return Err(Error::invalid("r2", "must be < 0"));
        }
        let fu = backbone_force(self, self.du);
        if !fu.is_finite() || !unloading_stiffness(self).is_finite() {
            return Err(Error::invalid("saws", "parameters produce a non-finite backbone"));
        }
        Ok(())
    }
}

/// Per-wall inputs of the Park–Ang index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WallDamageParams {
    /// Ultimate monotonic deformation (mm).
    #[serde(rename = "delta_u_mm")]
    pub delta_u: f64,
    /// Equivalent yield force (kN).
    #[serde(rename = "f_ey_kn")]
    pub f_ey: f64,
    /// Nail spacing (in).
    #[serde(rename = "nail_spacing_in")]
    pub x_ns: f64,
    /// Width-to-height ratio.
    #[serde(rename = "width_to_height")]
    pub x_wh: f64,
}

impl WallDamageParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("delta_u", self.delta_u),
            ("f_ey", self.f_ey),
            ("x_ns", self.x_ns),
            ("x_wh", self.x_wh),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(name, "must be finite and > 0"));
            }
        }
        Ok(())
    }
}

/// Monotonic envelope force at drift `d`.
pub fn backbone_force(p: &SawsParameters, d: f64) -> f64 {
    let x = d.abs();
    let magnitude = if x <= p.du {
        (p.f0 + p.r1 * p.s0 * x) * -libm::expm1(-p.s0 * x / p.f0)
    } else {
        let fu = (p.f0 + p.r1 * p.s0 * p.du) * -libm::expm1(-p.s0 * p.du / p.f0);
        (fu + p.r2 * p.s0 * (x - p.du)).max(0.0)
    };
    if d < 0.0 {
        -magnitude
    } else {
        magnitude
    }
}

/// Slope of the envelope at drift `d` (even in `d`).
pub fn backbone_slope(p: &SawsParameters, d: f64) -> f64 {
    let x = d.abs();
    if x <= p.du {
        let decay = libm::exp(-p.s0 * x / p.f0);
        p.r1 * p.s0 * (1.0 - decay) + (p.f0 + p.r1 * p.s0 * x) * (p.s0 / p.f0) * decay
    } else if backbone_force(p, x) > 0.0 {
        p.r2 * p.s0
    } else {
        0.0
    }
}

/// Slope of the virgin force–drift law at the origin.
pub fn initial_stiffness(p: &SawsParameters) -> f64 {
    backbone_slope(p, 0.0)
}

fn max_backbone_slope(p: &SawsParameters) -> f64 {
    if p.r1 <= 0.5 {
        return p.s0;
    }
    // The backbone is convex near the origin for R1 > 1/2; its slope peaks
    // where the second derivative vanishes.
    let inflection = p.f0 * (2.0 * p.r1 - 1.0) / (p.r1 * p.s0);
    let at = inflection.min(p.du);
    backbone_slope(p, at).max(p.s0)
}

/// Unloading stiffness, never below the steepest backbone slope.
pub fn unloading_stiffness(p: &SawsParameters) -> f64 {
    (p.r3 * p.s0).max(max_backbone_slope(p))
}

fn pinching_stiffness(p: &SawsParameters) -> f64 {
    (p.r4 * p.s0).min(unloading_stiffness(p))
}

fn reloading_stiffness(p: &SawsParameters, reach: f64) -> f64 {
    let ku = unloading_stiffness(p);
    if reach <= 0.0 {
        return ku;
    }
    let degraded = p.s0 * libm::pow(p.f0 / (p.s0 * p.beta * reach), p.alpha);
    degraded.min(ku)
}

/// Active hysteresis branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    Virgin,
    Backbone,
    Softening,
    Unloading,
    Pinching,
    Reloading,
    Plateau,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Rest,
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy)]
struct Piece {
    force: f64,
    slope: f64,
    branch: Branch,
}

impl Piece {
    fn mirrored(self) -> Self {
        Piece {
            force: -self.force,
            ..self
        }
    }
}

fn lower(a: Piece, b: Piece) -> Piece {
    if b.force < a.force {
        b
    } else {
        a
    }
}

fn upper(a: Piece, b: Piece) -> Piece {
    if b.force > a.force {
        b
    } else {
        a
    }
}

/// Reloading curve towards the positive extreme `reach >= 0`.
fn reload_curve(p: &SawsParameters, reach: f64, d: f64) -> Piece {
    if d >= reach {
        let force = backbone_force(p, d);
        let branch = if d <= p.du {
            Branch::Backbone
        } else if force > 0.0 {
            Branch::Softening
        } else {
            Branch::Plateau
        };
        return Piece {
            force,
            slope: backbone_slope(p, d),
            branch,
        };
    }
    let target = backbone_force(p, reach);
    let kd = reloading_stiffness(p, reach);
    let reload = Piece {
        force: target + kd * (d - reach),
        slope: kd,
        branch: Branch::Reloading,
    };
    let kp = pinching_stiffness(p);
    let intercept = p.fi.min((target - kp * reach).max(0.0));
    let pinch_force = intercept + kp * d;
    let pinch = if pinch_force < target {
        Piece {
            force: pinch_force,
            slope: kp,
            branch: Branch::Pinching,
        }
    } else {
        Piece {
            force: target,
            slope: 0.0,
            branch: Branch::Plateau,
        }
    };
    upper(reload, pinch)
}

/// Force path for increasing drift after a reversal at `(dr, fr)`.
/// `reach_pos` and `reach_neg` are the excursion magnitudes on each side.
fn ascend(p: &SawsParameters, dr: f64, fr: f64, reach_pos: f64, reach_neg: f64, d: f64) -> Piece {
    let ku = unloading_stiffness(p);
    let unload = Piece {
        force: fr + ku * (d - dr),
        slope: ku,
        branch: Branch::Unloading,
    };
    let towards_pos = reload_curve(p, reach_pos, d);
    let towards_neg = reload_curve(p, reach_neg, -d).mirrored();
    lower(unload, upper(towards_pos, towards_neg))
}

fn descend(p: &SawsParameters, dr: f64, fr: f64, reach_pos: f64, reach_neg: f64, d: f64) -> Piece {
    ascend(p, -dr, -fr, reach_neg, reach_pos, -d).mirrored()
}

/// Work stored recoverably at force `f`, by the unloading-stiffness convention.
fn recoverable(f: f64, ku: f64) -> f64 {
    if ku.is_finite() {
        0.5 * f * f / ku
    } else {
        0.0
    }
}

/// Path-dependent state of one wall.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HystereticWallState {
    /// Current drift (mm).
    pub d: f64,
    /// Current restoring force (kN).
    pub f: f64,
    /// Largest positive drift reached (mm, >= 0).
    pub d_max_pos: f64,
    /// Most negative drift reached (mm, <= 0).
    pub d_max_neg: f64,
    /// Cumulative dissipated energy (kN mm), nondecreasing.
    pub e_hyst: f64,
    /// Running work integral of f dd (kN mm).
    pub work: f64,
    pub branch: Branch,
    pub direction: Direction,
    /// (d, f) at the most recent load reversal.
    pub last_reversal: (f64, f64),
}

impl Default for HystereticWallState {
    fn default() -> Self {
        Self::virgin()
    }
}

impl HystereticWallState {
    pub fn virgin() -> Self {
        HystereticWallState {
            d: 0.0,
            f: 0.0,
            d_max_pos: 0.0,
            d_max_neg: 0.0,
            e_hyst: 0.0,
            work: 0.0,
            branch: Branch::Virgin,
            direction: Direction::Rest,
            last_reversal: (0.0, 0.0),
        }
    }
}

/// Outcome of [`step_wall`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WallStep {
    pub state: HystereticWallState,
    pub force: f64,
    pub tangent: f64,
}

/// Advance a wall to drift `d_next`.
///
/// The force depends only on the reversal history, so stepping a committed
/// state straight to a trial drift gives the same force as any finer
/// monotone subdivision of the move.
pub fn step_wall(state: &HystereticWallState, p: &SawsParameters, d_next: f64) -> WallStep {
    let s = state;
    if d_next == s.d {
        let tangent = match s.direction {
            Direction::Rest => initial_stiffness(p),
            Direction::Positive => {
                let (dr, fr) = s.last_reversal;
                ascend(p, dr, fr, s.d_max_pos, -s.d_max_neg, s.d).slope
            }
            Direction::Negative => {
                let (dr, fr) = s.last_reversal;
                descend(p, dr, fr, s.d_max_pos, -s.d_max_neg, s.d).slope
            }
        };
        return WallStep {
            state: *s,
            force: s.f,
            tangent,
        };
    }

    let direction = if d_next > s.d {
        Direction::Positive
    } else {
        Direction::Negative
    };
    let (dr, fr) = if direction == s.direction {
        s.last_reversal
    } else {
        (s.d, s.f)
    };
    let piece = match direction {
        Direction::Positive => ascend(p, dr, fr, s.d_max_pos, -s.d_max_neg, d_next),
        _ => descend(p, dr, fr, s.d_max_pos, -s.d_max_neg, d_next),
    };

    let work = s.work + 0.5 * (s.f + piece.force) * (d_next - s.d);
    let dissipated = work - recoverable(piece.force, unloading_stiffness(p));
    let next = HystereticWallState {
        d: d_next,
        f: piece.force,
        d_max_pos: s.d_max_pos.max(d_next),
        d_max_neg: s.d_max_neg.min(d_next),
        e_hyst: s.e_hyst.max(dissipated),
        work,
        branch: piece.branch,
        direction,
        last_reversal: (dr, fr),
    };
    WallStep {
        state: next,
        force: piece.force,
        tangent: piece.slope,
    }
}

/// Dissipated energy of a recorded (drift, force) trace, using the same
/// convention as [`step_wall`]: trapezoidal work minus the energy recoverable
/// along the unloading slope, accumulated as a running maximum.
///
/// `recoverable_stiffness = f64::INFINITY` counts the plain work integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DissipationMeter {
    recoverable_stiffness: f64,
    work: f64,
    stored_at_start: f64,
    dissipated: f64,
    last: Option<(f64, f64)>,
}

impl DissipationMeter {
    pub fn new(recoverable_stiffness: f64) -> Self {
        DissipationMeter {
            recoverable_stiffness,
            work: 0.0,
            stored_at_start: 0.0,
            dissipated: 0.0,
            last: None,
        }
    }

    /// Meter matching the convention of [`step_wall`] for walls with `p`.
    pub fn for_wall(p: &SawsParameters) -> Self {
        Self::new(unloading_stiffness(p))
    }

    pub fn push(&mut self, d: f64, f: f64) {
        match self.last {
            Some((d0, f0)) => self.work += 0.5 * (f0 + f) * (d - d0),
            None => self.stored_at_start = recoverable(f, self.recoverable_stiffness),
        }
        self.last = Some((d, f));
        let stored = recoverable(f, self.recoverable_stiffness) - self.stored_at_start;
        self.dissipated = self.dissipated.max(self.work - stored);
    }

    pub fn work(&self) -> f64 {
        self.work
    }

    pub fn dissipated(&self) -> f64 {
        self.dissipated
    }
}
