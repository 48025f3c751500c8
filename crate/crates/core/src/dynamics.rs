//! Newmark time integration of the building and of the observer.
//!
//! Both runs share [`respond`]: the truth model is driven by `-M b1 ug(t)`,
//! the observer by the corrective force `c2' E y(t)` with the grounded
//! dampers `c2' E c2` added to the structural damping.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hysteresis::HystereticWallState;
use crate::structure::{global_restoring, BuildingModel, MM_PER_M};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSettings {
    /// Time step (s).
    #[serde(rename = "dt_s")]
    pub dt: f64,
    #[serde(default = "default_beta")]
    pub newmark_beta: f64,
    #[serde(default = "default_gamma")]
    pub newmark_gamma: f64,
    /// Residual norm tolerance (kN).
    #[serde(rename = "newton_tol_kn", default = "default_tol")]
    pub newton_tol: f64,
    #[serde(default = "default_max_iter")]
    pub newton_max_iter: usize,
    /// Local step halvings tried before giving up on a step.
    #[serde(default = "default_bisections")]
    pub max_bisections: usize,
}

fn default_beta() -> f64 {
    0.25
}
fn default_gamma() -> f64 {
    0.5
}
fn default_tol() -> f64 {
    1e-6
}
fn default_max_iter() -> usize {
    30
}
fn default_bisections() -> usize {
    4
}

impl IntegratorSettings {
    /// Average-acceleration Newmark with full Newton iteration.
    pub fn average_acceleration(dt: f64) -> Self {
        IntegratorSettings {
            dt,
            newmark_beta: default_beta(),
            newmark_gamma: default_gamma(),
            newton_tol: default_tol(),
            newton_max_iter: default_max_iter(),
            max_bisections: default_bisections(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::invalid("dt", "must be finite and > 0"));
        }
        if !(0.0..=0.5).contains(&self.newmark_beta) || self.newmark_beta == 0.0 {
            // beta = 0 is explicit central difference, which needs a
            // different update than the implicit one used here
            return Err(Error::invalid("newmark_beta", "must lie in (0, 0.5]"));
        }
        if !(0.5..=1.0).contains(&self.newmark_gamma) {
            return Err(Error::invalid("newmark_gamma", "must lie in [0.5, 1]"));
        }
        if self.newton_tol.is_nan() || self.newton_tol <= 0.0 {
            return Err(Error::invalid("newton_tol", "must be > 0"));
        }
        if self.newton_max_iter == 0 {
            return Err(Error::invalid("newton_max_iter", "must be >= 1"));
        }
        Ok(())
    }
}

/// Measured DoFs and the diagonal feedback gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserverConfig {
    pub measured_dofs: Vec<usize>,
    /// Diagonal of `E` (kN s/m), one entry per measured DoF.
    pub gains: Vec<f64>,
}

impl ObserverConfig {
    pub fn new(measured_dofs: Vec<usize>, gains: Vec<f64>, n_dof: usize) -> Result<Self> {
        if measured_dofs.len() != gains.len() {
            return Err(Error::DimensionMismatch {
                what: "feedback gains",
                expected: measured_dofs.len(),
                found: gains.len(),
            });
        }
        for (i, &d) in measured_dofs.iter().enumerate() {
            if d >= n_dof {
                return Err(Error::invalid("measured_dofs", "index beyond the model DoFs"));
            }
            if measured_dofs[..i].contains(&d) {
                return Err(Error::invalid("measured_dofs", "each DoF may be measured once"));
            }
        }
        if gains.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(Error::invalid("gains", "must be finite and >= 0"));
        }
        Ok(ObserverConfig {
            measured_dofs,
            gains,
        })
    }

    pub fn channels(&self) -> usize {
        self.measured_dofs.len()
    }

    /// Boolean selection matrix `c2` (m x n).
    pub fn measurement_matrix(&self, n_dof: usize) -> DMatrix<f64> {
        let mut c2 = DMatrix::zeros(self.channels(), n_dof);
        for (row, &dof) in self.measured_dofs.iter().enumerate() {
            c2[(row, dof)] = 1.0;
        }
        c2
    }

    /// Grounded dampers `c2' E c2`.
    pub fn added_damping(&self, n_dof: usize) -> DMatrix<f64> {
        let mut c = DMatrix::zeros(n_dof, n_dof);
        for (&dof, &g) in self.measured_dofs.iter().zip(&self.gains) {
            c[(dof, dof)] += g;
        }
        c
    }

    /// Corrective forces `c2' E y` for every column of `y` (m x steps).
    pub fn feedback_forces(&self, y: &DMatrix<f64>, n_dof: usize) -> DMatrix<f64> {
        let mut p = DMatrix::zeros(n_dof, y.ncols());
        for (row, (&dof, &g)) in self.measured_dofs.iter().zip(&self.gains).enumerate() {
            for k in 0..y.ncols() {
                p[(dof, k)] += g * y[(row, k)];
            }
        }
        p
    }
}

/// Cumulative energy terms (kN m) at every output step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EnergyBalance {
    pub input: Vec<f64>,
    pub kinetic: Vec<f64>,
    pub viscous: Vec<f64>,
    /// Work done on the walls: recoverable strain energy plus dissipation.
    pub wall: Vec<f64>,
}

impl EnergyBalance {
    /// Largest `|input - (kinetic + viscous + wall)|` relative to the
    /// largest input magnitude seen so far, over all steps.
    pub fn max_relative_error(&self) -> f64 {
        let mut scale: f64 = 0.0;
        let mut worst: f64 = 0.0;
        for k in 0..self.input.len() {
            scale = scale.max(self.input[k].abs());
            let gap = (self.input[k] - self.kinetic[k] - self.viscous[k] - self.wall[k]).abs();
            if scale > 0.0 {
                worst = worst.max(gap / scale);
            } else if gap > 0.0 {
                worst = f64::INFINITY;
            }
        }
        worst
    }
}

/// Time-aligned response at all DoFs and walls.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseHistory {
    pub time: Vec<f64>,
    /// Displacements (m, rad), n x steps.
    pub q: DMatrix<f64>,
    pub dq: DMatrix<f64>,
    pub ddq: DMatrix<f64>,
    /// Wall drifts (mm), walls x steps.
    pub wall_drifts: DMatrix<f64>,
    /// Wall forces (kN), walls x steps.
    pub wall_forces: DMatrix<f64>,
    /// Dissipated wall energy (kN mm), walls x steps.
    pub wall_energies: DMatrix<f64>,
    pub energy: EnergyBalance,
    /// Number of local step halvings the run needed.
    pub bisections: usize,
}

impl ResponseHistory {
    pub fn steps(&self) -> usize {
        self.time.len()
    }

    pub fn n_dof(&self) -> usize {
        self.q.nrows()
    }

    pub fn n_walls(&self) -> usize {
        self.wall_drifts.nrows()
    }
}

#[derive(Clone)]
struct Kinematics {
    q: DVector<f64>,
    v: DVector<f64>,
    a: DVector<f64>,
    states: Vec<HystereticWallState>,
    wall_forces: Vec<f64>,
    drifts: Vec<f64>,
    restoring: DVector<f64>,
}

struct Integrator<'a> {
    model: &'a BuildingModel,
    damping: DMatrix<f64>,
    settings: IntegratorSettings,
    bisections: usize,
}

struct StepFailure {
    residual: f64,
    non_finite: bool,
}

impl Integrator<'_> {
    fn newton(&self, from: &Kinematics, p1: &DVector<f64>, h: f64) -> core::result::Result<Kinematics, StepFailure> {
        let m = &self.model.mass;
        let c = &self.damping;
        let (beta, gamma) = (self.settings.newmark_beta, self.settings.newmark_gamma);
        let mut q = &from.q + &from.v * h + &from.a * (0.5 * h * h);
        let mut residual = f64::INFINITY;
        for _ in 0..self.settings.newton_max_iter {
            let a = (&q - &from.q - &from.v * h) / (beta * h * h) - &from.a * (0.5 / beta - 1.0);
            let v = &from.v + (&from.a * (1.0 - gamma) + &a * gamma) * h;
            let r = global_restoring(self.model, &from.states, &q).map_err(|_| StepFailure {
                residual,
                non_finite: true,
            })?;
            let res = p1 - m * &a - c * &v - &r.force;
            residual = res.norm();
            if !residual.is_finite() {
                return Err(StepFailure {
                    residual,
                    non_finite: true,
                });
            }
            if residual < self.settings.newton_tol {
                return Ok(Kinematics {
                    q,
                    v,
                    a,
                    states: r.states,
                    wall_forces: r.wall_forces,
                    drifts: r.drifts,
                    restoring: r.force,
                });
            }
            let k_eff = m / (beta * h * h) + c * (gamma / (beta * h)) + &r.tangent;
            let dq = k_eff.lu().solve(&res).ok_or(StepFailure {
                residual,
                non_finite: false,
            })?;
            q += dq;
        }
        Err(StepFailure {
            residual,
            non_finite: false,
        })
    }

    fn advance(
        &mut self,
        from: &Kinematics,
        p0: &DVector<f64>,
        p1: &DVector<f64>,
        h: f64,
        depth: usize,
        ledger: &mut [f64; 4],
    ) -> core::result::Result<Kinematics, StepFailure> {
        match self.newton(from, p1, h) {
            Ok(next) => {
                self.book(from, &next, p0, p1, h, ledger);
                Ok(next)
            }
            Err(fail) if fail.non_finite || depth >= self.settings.max_bisections => Err(fail),
            Err(_) => {
                self.bisections += 1;
                let mid = (p0 + p1) * 0.5;
                let half = self.advance(from, p0, &mid, 0.5 * h, depth + 1, ledger)?;
                self.advance(&half, &mid, p1, 0.5 * h, depth + 1, ledger)
            }
        }
    }

    /// Trapezoidal energy increments; exact for average acceleration.
    fn book(&self, from: &Kinematics, to: &Kinematics, p0: &DVector<f64>, p1: &DVector<f64>, h: f64, ledger: &mut [f64; 4]) {
        let dq = &to.q - &from.q;
        let v_avg = (&from.v + &to.v) * 0.5;
        ledger[0] += dq.dot(&((p0 + p1) * 0.5));
        ledger[2] += h * v_avg.dot(&(&self.damping * &v_avg));
        ledger[3] += dq.dot(&((&from.restoring + &to.restoring) * 0.5));
    }
}

/// Integrate `M a + (C_D + extra) v + F_r(q) = P(t)` from rest, with `P`
/// given column by column on the grid `t_k = k dt`.
pub fn respond(
    model: &BuildingModel,
    extra_damping: Option<&DMatrix<f64>>,
    loads: &DMatrix<f64>,
    settings: &IntegratorSettings,
) -> Result<ResponseHistory> {
    settings.validate()?;
    let n = model.n_dof();
    if loads.nrows() != n {
        return Err(Error::DimensionMismatch {
            what: "load history rows",
            expected: n,
            found: loads.nrows(),
        });
    }
    let steps = loads.ncols();
    let walls = model.walls.len();
    let damping = match extra_damping {
        Some(extra) => {
            if extra.shape() != (n, n) {
                return Err(Error::DimensionMismatch {
                    what: "added damping",
                    expected: n,
                    found: extra.nrows(),
                });
            }
            &model.damping + extra
        }
        None => model.damping.clone(),
    };

    let mut history = ResponseHistory {
        time: (0..steps).map(|k| k as f64 * settings.dt).collect(),
        q: DMatrix::zeros(n, steps),
        dq: DMatrix::zeros(n, steps),
        ddq: DMatrix::zeros(n, steps),
        wall_drifts: DMatrix::zeros(walls, steps),
        wall_forces: DMatrix::zeros(walls, steps),
        wall_energies: DMatrix::zeros(walls, steps),
        energy: EnergyBalance {
            input: vec![0.0; steps],
            kinetic: vec![0.0; steps],
            viscous: vec![0.0; steps],
            wall: vec![0.0; steps],
        },
        bisections: 0,
    };
    if steps == 0 {
        return Ok(history);
    }

    let p0: DVector<f64> = loads.column(0).into_owned();
    let chol = model
        .mass
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("mass"))?;
    let mut current = Kinematics {
        q: DVector::zeros(n),
        v: DVector::zeros(n),
        a: chol.solve(&p0),
        states: model.virgin_states(),
        wall_forces: vec![0.0; walls],
        drifts: vec![0.0; walls],
        restoring: DVector::zeros(n),
    };
    history.ddq.set_column(0, &current.a);

    let mut integrator = Integrator {
        model,
        damping,
        settings: *settings,
        bisections: 0,
    };
    // [input, kinetic (unused), viscous, wall]
    let mut ledger = [0.0f64; 4];
    for k in 1..steps {
        let p_prev: DVector<f64> = loads.column(k - 1).into_owned();
        let p_next: DVector<f64> = loads.column(k).into_owned();
        let next = integrator
            .advance(&current, &p_prev, &p_next, settings.dt, 0, &mut ledger)
            .map_err(|fail| {
                if fail.non_finite {
                    Error::NonFiniteResponse {
                        step: k,
                        time: history.time[k],
                    }
                } else {
                    Error::NewtonDivergence {
                        step: k,
                        time: history.time[k],
                        residual: fail.residual,
                    }
                }
            })?;
        if !(next.q.iter().chain(next.v.iter()).chain(next.a.iter()).all(|x| x.is_finite())) {
            return Err(Error::NonFiniteResponse {
                step: k,
                time: history.time[k],
            });
        }
        current = next;
        history.q.set_column(k, &current.q);
        history.dq.set_column(k, &current.v);
        history.ddq.set_column(k, &current.a);
        for w in 0..walls {
            history.wall_drifts[(w, k)] = current.drifts[w];
            history.wall_forces[(w, k)] = current.wall_forces[w];
            history.wall_energies[(w, k)] = current.states[w].e_hyst;
        }
        history.energy.input[k] = ledger[0];
        history.energy.kinetic[k] = 0.5 * current.v.dot(&(&model.mass * &current.v));
        history.energy.viscous[k] = ledger[2];
        history.energy.wall[k] = ledger[3];
    }
    history.bisections = integrator.bisections;
    Ok(history)
}

/// Ground-motion loads `-M b1 ug` for `ug` given as r x steps (m/s^2).
pub fn ground_motion_loads(model: &BuildingModel, ug: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let r = model.ground_influence.ncols();
    if ug.nrows() != r {
        return Err(Error::DimensionMismatch {
            what: "ground motion components",
            expected: r,
            found: ug.nrows(),
        });
    }
    // accumulating onto +0 keeps a zero record free of signed zeros
    let mut loads = DMatrix::zeros(model.n_dof(), ug.ncols());
    loads.gemm(-1.0, &(&model.mass * &model.ground_influence), ug, 1.0);
    Ok(loads)
}

/// Response of the building to ground accelerations `ug` (r x steps, m/s^2).
pub fn simulate(model: &BuildingModel, ug: &DMatrix<f64>, settings: &IntegratorSettings) -> Result<ResponseHistory> {
    let loads = ground_motion_loads(model, ug)?;
    respond(model, None, &loads, settings)
}

/// Observer estimate driven by velocity feedback `y` (m x steps, m/s).
pub fn observe(
    model: &BuildingModel,
    obs: &ObserverConfig,
    y: &DMatrix<f64>,
    settings: &IntegratorSettings,
) -> Result<ResponseHistory> {
    let n = model.n_dof();
    if y.nrows() != obs.channels() {
        return Err(Error::DimensionMismatch {
            what: "feedback channels",
            expected: obs.channels(),
            found: y.nrows(),
        });
    }
    if obs.measured_dofs.iter().any(|&d| d >= n) {
        return Err(Error::invalid("measured_dofs", "index beyond the model DoFs"));
    }
    let extra = obs.added_damping(n);
    let loads = obs.feedback_forces(y, n);
    respond(model, Some(&extra), &loads, settings)
}

/// Drift and force traces of one wall.
#[derive(Debug, Clone, PartialEq)]
pub struct WallTrace {
    pub wall: usize,
    /// Drift (mm).
    pub drift: Vec<f64>,
    /// Force (kN).
    pub force: Vec<f64>,
}

/// Per-wall hysteresis traces, with drifts recomputed as `T_w q(t)`.
pub fn drift_histories(history: &ResponseHistory, model: &BuildingModel) -> Result<Vec<WallTrace>> {
    if history.n_dof() != model.n_dof() {
        return Err(Error::DimensionMismatch {
            what: "history DoFs",
            expected: model.n_dof(),
            found: history.n_dof(),
        });
    }
    if history.n_walls() != model.walls.len() {
        return Err(Error::DimensionMismatch {
            what: "history walls",
            expected: model.walls.len(),
            found: history.n_walls(),
        });
    }
    Ok((0..model.walls.len())
        .map(|w| {
            let map = model.drift_map(w);
            let drift = (0..history.steps())
                .map(|k| MM_PER_M * map.dot(&history.q.column(k)))
                .collect();
            let force = history.wall_forces.row(w).iter().copied().collect();
            WallTrace { wall: w, drift, force }
        })
        .collect())
}

/// State matrix `[[0, I], [-M^-1 K0, -M^-1 (C_D + c2' E c2)]]` of the
/// linearized observer.
pub fn observer_state_matrix(
    mass: &DMatrix<f64>,
    damping: &DMatrix<f64>,
    k0: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = mass.nrows();
    let chol = mass
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("mass"))?;
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    a.view_mut((0, n), (n, n)).fill_with_identity();
    a.view_mut((n, 0), (n, n)).copy_from(&(-chol.solve(k0)));
    a.view_mut((n, n), (n, n)).copy_from(&(-chol.solve(damping)));
    Ok(a)
}
