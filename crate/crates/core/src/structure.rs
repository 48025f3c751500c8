//! Rigid-diaphragm shear building assembly.
//!
//! Global displacements `q` are in m and rad, ordered floor by floor as
//! `[u_x, u_y, theta]`, with the rotation taken about the floor mass center.
//! Masses are in tonnes (rotational inertia in t m^2), so forces come out in
//! kN and stiffnesses in kN/m. Wall drifts and the SAWS laws stay in mm.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hysteresis::{
    initial_stiffness, step_wall, HystereticWallState, SawsParameters, WallDamageParams,
};

pub const DOF_PER_FLOOR: usize = 3;

/// Wall drifts are carried in mm while `q` is in m.
pub const MM_PER_M: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Rotation,
}

impl Axis {
    pub fn offset(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Rotation => 2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Rotation => "rz",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloorLayout {
    /// Per-story height (m), ground story first.
    pub story_heights: Vec<f64>,
}

impl FloorLayout {
    pub fn new(story_heights: Vec<f64>) -> Result<Self> {
        if story_heights.is_empty() {
            return Err(Error::invalid("story_heights", "at least one story is required"));
        }
        if story_heights.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
            return Err(Error::invalid("story_heights", "heights must be finite and > 0"));
        }
        Ok(FloorLayout { story_heights })
    }

    pub fn n_stories(&self) -> usize {
        self.story_heights.len()
    }

    pub fn n_dof(&self) -> usize {
        DOF_PER_FLOOR * self.n_stories()
    }

    /// Global index of `axis` at the floor above `story` (1-based).
    pub fn dof(&self, story: usize, axis: Axis) -> usize {
        DOF_PER_FLOOR * (story - 1) + axis.offset()
    }

    /// Inverse of [`FloorLayout::dof`].
    pub fn locate(&self, dof: usize) -> (usize, Axis) {
        let axis = match dof % DOF_PER_FLOOR {
            0 => Axis::X,
            1 => Axis::Y,
            _ => Axis::Rotation,
        };
        (dof / DOF_PER_FLOOR + 1, axis)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallPlacement {
    pub id: String,
    /// 1-based story; the wall connects floor `story` to the floor below it.
    pub story: usize,
    /// Plan position of the wall line relative to the mass center (m).
    pub origin: [f64; 2],
    /// Unit vector along the resisting axis.
    pub direction: [f64; 2],
    pub params: SawsParameters,
    pub damage: WallDamageParams,
}

impl WallPlacement {
    pub fn validate(&self, layout: &FloorLayout) -> Result<()> {
        if self.story == 0 || self.story > layout.n_stories() {
            return Err(Error::StoryOutOfRange {
                wall: self.id.clone(),
                story: self.story,
                n_stories: layout.n_stories(),
            });
        }
        let [cx, cy] = self.direction;
        if (libm::hypot(cx, cy) - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("direction", "must have unit norm"));
        }
        if !(self.origin[0].is_finite() && self.origin[1].is_finite()) {
            return Err(Error::invalid("origin", "must be finite"));
        }
        self.params.validate()?;
        self.damage.validate()
    }

    /// Signed lever arm of the wall line about the floor rotation center:
    /// drift per unit floor rotation.
    pub fn lever_arm(&self) -> f64 {
        let [x, y] = self.origin;
        let [cx, cy] = self.direction;
        x * cy - y * cx
    }
}

/// Row `T_w` such that the wall drift is `T_w q` (in m).
pub fn wall_drift_map(layout: &FloorLayout, wall: &WallPlacement) -> Result<DVector<f64>> {
    if wall.story == 0 || wall.story > layout.n_stories() {
        return Err(Error::StoryOutOfRange {
            wall: wall.id.clone(),
            story: wall.story,
            n_stories: layout.n_stories(),
        });
    }
    let mut row = DVector::zeros(layout.n_dof());
    let coeffs = [wall.direction[0], wall.direction[1], wall.lever_arm()];
    let top = layout.dof(wall.story, Axis::X);
    for (k, c) in coeffs.iter().enumerate() {
        row[top + k] += c;
    }
    if wall.story > 1 {
        let bottom = layout.dof(wall.story - 1, Axis::X);
        for (k, c) in coeffs.iter().enumerate() {
            row[bottom + k] -= c;
        }
    }
    Ok(row)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FloorMass {
    /// Translational mass (t).
    pub mass: f64,
    /// Rotational inertia about the mass center (t m^2).
    pub inertia: f64,
}

/// Two `(omega rad/s, zeta)` targets for Rayleigh damping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayleighTargets {
    pub first: (f64, f64),
    pub second: (f64, f64),
}

/// How process noise enters the equation of motion.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum ProcessNoiseInfluence {
    /// Unmeasured ground acceleration: `b2 = M b1`.
    #[default]
    GroundMotion,
    /// Independent force at every DoF.
    Identity,
    Custom(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildingModel {
    pub mass: DMatrix<f64>,
    pub damping: DMatrix<f64>,
    pub layout: FloorLayout,
    pub walls: Vec<WallPlacement>,
    /// Ground-motion influence (n x r), columns are the x and y components.
    pub ground_influence: DMatrix<f64>,
    /// Process-noise influence (n x p).
    pub noise_influence: DMatrix<f64>,
    drift_maps: Vec<DVector<f64>>,
}

impl BuildingModel {
    /// Lumped rigid-diaphragm building with Rayleigh damping on `(M, K0)`.
    pub fn new(
        layout: FloorLayout,
        floors: &[FloorMass],
        walls: Vec<WallPlacement>,
        damping: RayleighTargets,
        noise: ProcessNoiseInfluence,
    ) -> Result<Self> {
        let n = layout.n_dof();
        if floors.len() != layout.n_stories() {
            return Err(Error::DimensionMismatch {
                what: "floor masses",
                expected: layout.n_stories(),
                found: floors.len(),
            });
        }
        let mut mass = DMatrix::zeros(n, n);
        for (i, fm) in floors.iter().enumerate() {
            if !(fm.mass > 0.0 && fm.inertia > 0.0) {
                return Err(Error::invalid("floors", "mass and inertia must be > 0"));
            }
            let s = i + 1;
            mass[(layout.dof(s, Axis::X), layout.dof(s, Axis::X))] = fm.mass;
            mass[(layout.dof(s, Axis::Y), layout.dof(s, Axis::Y))] = fm.mass;
            mass[(layout.dof(s, Axis::Rotation), layout.dof(s, Axis::Rotation))] = fm.inertia;
        }
        let ground = ground_influence(&layout);
        let noise = match noise {
            ProcessNoiseInfluence::GroundMotion => &mass * &ground,
            ProcessNoiseInfluence::Identity => DMatrix::identity(n, n),
            ProcessNoiseInfluence::Custom(b2) => b2,
        };
        let mut model = Self::from_parts(mass, DMatrix::zeros(n, n), layout, walls, ground, noise)?;
        let k0 = linear_stiffness(&model)?.matrix;
        model.damping = rayleigh_damping(&model.mass, &k0, damping)?;
        Ok(model)
    }

    pub fn from_parts(
        mass: DMatrix<f64>,
        damping: DMatrix<f64>,
        layout: FloorLayout,
        walls: Vec<WallPlacement>,
        ground_influence: DMatrix<f64>,
        noise_influence: DMatrix<f64>,
    ) -> Result<Self> {
        let n = layout.n_dof();
        for (what, m) in [("mass matrix", &mass), ("damping matrix", &damping)] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: n,
                    found: m.nrows(),
                });
            }
        }
        for (what, b) in [("ground influence", &ground_influence), ("noise influence", &noise_influence)] {
            if b.nrows() != n {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: n,
                    found: b.nrows(),
                });
            }
        }
        if !is_symmetric(&mass, 1e-12) || mass.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite("mass"));
        }
        if !is_symmetric(&damping, 1e-9) {
            return Err(Error::invalid("damping", "must be symmetric"));
        }
        let drift_maps = walls
            .iter()
            .map(|w| {
                w.validate(&layout)?;
                wall_drift_map(&layout, w)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BuildingModel {
            mass,
            damping,
            layout,
            walls,
            ground_influence,
            noise_influence,
            drift_maps,
        })
    }

    pub fn n_dof(&self) -> usize {
        self.layout.n_dof()
    }

    pub fn drift_map(&self, wall: usize) -> &DVector<f64> {
        &self.drift_maps[wall]
    }

    /// Drift of wall `w` in mm.
    pub fn wall_drift(&self, wall: usize, q: &DVector<f64>) -> f64 {
        MM_PER_M * self.drift_maps[wall].dot(q)
    }

    pub fn virgin_states(&self) -> Vec<HystereticWallState> {
        vec![HystereticWallState::virgin(); self.walls.len()]
    }

    /// Copy of the model with every wall's stiffness and strength scaled by
    /// `factor`; damping is left untouched.
    pub fn with_scaled_walls(&self, factor: f64) -> Result<Self> {
        let mut walls = self.walls.clone();
        for w in &mut walls {
            w.params.s0 *= factor;
            w.params.f0 *= factor;
            w.params.fi *= factor;
        }
        Self::from_parts(
            self.mass.clone(),
            self.damping.clone(),
            self.layout.clone(),
            walls,
            self.ground_influence.clone(),
            self.noise_influence.clone(),
        )
    }
}

fn ground_influence(layout: &FloorLayout) -> DMatrix<f64> {
    let mut b1 = DMatrix::zeros(layout.n_dof(), 2);
    for s in 1..=layout.n_stories() {
        b1[(layout.dof(s, Axis::X), 0)] = 1.0;
        b1[(layout.dof(s, Axis::Y), 1)] = 1.0;
    }
    b1
}

fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    (m - m.transpose()).amax() <= rel_tol * scale
}

/// Restoring forces, tangent and advanced wall states at a trial `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct Restoring {
    pub force: DVector<f64>,
    pub tangent: DMatrix<f64>,
    pub states: Vec<HystereticWallState>,
    /// Wall drifts (mm).
    pub drifts: Vec<f64>,
    /// Wall forces (kN).
    pub wall_forces: Vec<f64>,
}

/// Assemble `F_r(q)` and `K_T` from the walls, each stepped from its
/// committed state to the drift implied by `q`.
pub fn global_restoring(
    model: &BuildingModel,
    states: &[HystereticWallState],
    q: &DVector<f64>,
) -> Result<Restoring> {
    let n = model.n_dof();
    if q.len() != n {
        return Err(Error::DimensionMismatch {
            what: "displacement vector",
            expected: n,
            found: q.len(),
        });
    }
    if states.len() != model.walls.len() {
        return Err(Error::DimensionMismatch {
            what: "wall states",
            expected: model.walls.len(),
            found: states.len(),
        });
    }
    let mut force = DVector::zeros(n);
    let mut tangent = DMatrix::zeros(n, n);
    let mut next = Vec::with_capacity(states.len());
    let mut drifts = Vec::with_capacity(states.len());
    let mut wall_forces = Vec::with_capacity(states.len());
    for (i, (wall, state)) in model.walls.iter().zip(states).enumerate() {
        let map = &model.drift_maps[i];
        let drift = model.wall_drift(i, q);
        let step = step_wall(state, &wall.params, drift);
        force.axpy(step.force, map, 1.0);
        tangent.ger(MM_PER_M * step.tangent, map, map, 1.0);
        next.push(step.state);
        drifts.push(drift);
        wall_forces.push(step.force);
    }
    Ok(Restoring {
        force,
        tangent,
        states: next,
        drifts,
        wall_forces,
    })
}

/// Origin stiffness `K0` and the DoFs it leaves unrestrained.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearStiffness {
    pub matrix: DMatrix<f64>,
    pub unrestrained: Vec<usize>,
}

pub fn linear_stiffness(model: &BuildingModel) -> Result<LinearStiffness> {
    let n = model.n_dof();
    let mut k0 = DMatrix::zeros(n, n);
    for (i, wall) in model.walls.iter().enumerate() {
        let map = &model.drift_maps[i];
        k0.ger(MM_PER_M * initial_stiffness(&wall.params), map, map, 1.0);
    }
    let unrestrained = (0..n).filter(|&i| k0[(i, i)] == 0.0).collect();
    Ok(LinearStiffness {
        matrix: k0,
        unrestrained,
    })
}

/// Undamped natural frequencies (rad/s) of `(M, K)`, ascending.
pub fn modal_frequencies(mass: &DMatrix<f64>, stiffness: &DMatrix<f64>) -> Result<Vec<f64>> {
    let chol = mass
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("mass"))?;
    let l = chol.l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or(Error::NotPositiveDefinite("mass"))?;
    let a = &linv * stiffness * linv.transpose();
    let a = 0.5 * (&a + a.transpose());
    let eig = a.symmetric_eigen();
    let mut omegas: Vec<f64> = eig.eigenvalues.iter().map(|&l| libm::sqrt(l.max(0.0))).collect();
    omegas.sort_by(|a, b| a.total_cmp(b));
    Ok(omegas)
}

/// `C = a0 M + a1 K0` matching two target modal damping ratios.
pub fn rayleigh_damping(
    mass: &DMatrix<f64>,
    k0: &DMatrix<f64>,
    targets: RayleighTargets,
) -> Result<DMatrix<f64>> {
    let (w1, z1) = targets.first;
    let (w2, z2) = targets.second;
    if !(w1 > 0.0 && w2 > 0.0 && w1.is_finite() && w2.is_finite()) {
        return Err(Error::invalid("rayleigh targets", "frequencies must be finite and > 0"));
    }
    if z1 < 0.0 || z2 < 0.0 {
        return Err(Error::invalid("rayleigh targets", "damping ratios must be >= 0"));
    }
    if (w1 - w2).abs() <= 1e-12 * w1.max(w2) {
        return Err(Error::CoincidentFrequencies(w1));
    }
    // zeta_i = a0 / (2 w_i) + a1 w_i / 2
    let det = w2 / w1 - w1 / w2;
    let a0 = 2.0 * (z1 * w2 - z2 * w1) / det;
    let a1 = 2.0 * (z2 / w1 - z1 / w2) / det;
    Ok(mass * a0 + k0 * a1)
}
