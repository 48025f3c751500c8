//! Feedback gain selection by minimizing the trace of the displacement
//! estimation-error covariance of the linearized observer.
//!
//! The error `e = q - q_hat` of the linearized observer obeys
//! `M e'' + (C_D + c2' E c2) e' + K0 e = b2 w - c2' E v`, so its spectral
//! density is `H (b2 Sww b2' + c2' E Svv E c2) H*` with
//! `H = (-M w^2 + i w (C_D + c2' E c2) + K0)^-1`.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimize::{nelder_mead, NelderMeadSettings};
use crate::structure::{linear_stiffness, modal_frequencies, BuildingModel};

type C64 = Complex<f64>;

/// Linearized observer error system.
#[derive(Debug, Clone, PartialEq)]
pub struct GainProblem {
    pub mass: DMatrix<f64>,
    pub damping: DMatrix<f64>,
    pub k0: DMatrix<f64>,
    /// Process-noise influence `b2` (n x p).
    pub noise_influence: DMatrix<f64>,
    pub measured_dofs: Vec<usize>,
}

impl GainProblem {
    pub fn new(
        mass: DMatrix<f64>,
        damping: DMatrix<f64>,
        k0: DMatrix<f64>,
        noise_influence: DMatrix<f64>,
        measured_dofs: Vec<usize>,
    ) -> Result<Self> {
        let n = mass.nrows();
        for (what, m) in [("mass", &mass), ("damping", &damping), ("stiffness", &k0)] {
            if m.shape() != (n, n) {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: n,
                    found: m.nrows().max(m.ncols()),
                });
            }
        }
        if noise_influence.nrows() != n {
            return Err(Error::DimensionMismatch {
                what: "noise influence rows",
                expected: n,
                found: noise_influence.nrows(),
            });
        }
        for (i, &d) in measured_dofs.iter().enumerate() {
            if d >= n {
                return Err(Error::invalid("measured_dofs", "index beyond the model DoFs"));
            }
            if measured_dofs[..i].contains(&d) {
                return Err(Error::invalid("measured_dofs", "each DoF may be measured once"));
            }
        }
        Ok(GainProblem {
            mass,
            damping,
            k0,
            noise_influence,
            measured_dofs,
        })
    }

    /// Linearization of `model` about the virgin origin.
    pub fn from_model(model: &BuildingModel, measured_dofs: Vec<usize>) -> Result<Self> {
        let k0 = linear_stiffness(model)?;
        if !k0.unrestrained.is_empty() {
            return Err(Error::Unrestrained(k0.unrestrained));
        }
        GainProblem::new(
            model.mass.clone(),
            model.damping.clone(),
            k0.matrix,
            model.noise_influence.clone(),
            measured_dofs,
        )
    }

    pub fn n_dof(&self) -> usize {
        self.mass.nrows()
    }

    pub fn channels(&self) -> usize {
        self.measured_dofs.len()
    }

    pub fn noise_inputs(&self) -> usize {
        self.noise_influence.ncols()
    }

    /// `C_D + c2' E c2` for diagonal `E`.
    pub fn augmented_damping(&self, gains: &[f64]) -> DMatrix<f64> {
        let mut c = self.damping.clone();
        for (&d, &g) in self.measured_dofs.iter().zip(gains) {
            c[(d, d)] += g;
        }
        c
    }

    /// Critical-damping scale `2 sqrt(K0_jj M_jj)` per measured DoF.
    pub fn reference_gains(&self) -> Vec<f64> {
        self.measured_dofs
            .iter()
            .map(|&d| {
                let c = 2.0 * libm::sqrt(self.k0[(d, d)] * self.mass[(d, d)]);
                if c > 0.0 && c.is_finite() {
                    c
                } else {
                    1.0
                }
            })
            .collect()
    }

    fn check_gains(&self, gains: &[f64]) -> Result<()> {
        if gains.len() != self.channels() {
            return Err(Error::DimensionMismatch {
                what: "feedback gains",
                expected: self.channels(),
                found: gains.len(),
            });
        }
        if gains.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(Error::invalid("gains", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Two-sided, frequency-constant spectral densities (per rad/s).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    /// Process noise, p x p.
    pub s_ww: DMatrix<f64>,
    /// Measurement noise, m x m.
    pub s_vv: DMatrix<f64>,
}

impl NoiseModel {
    /// Independent channels: `s_w` on every process input and one
    /// intensity per measurement channel.
    pub fn white(process_inputs: usize, s_w: f64, s_v: &[f64]) -> Self {
        NoiseModel {
            s_ww: DMatrix::from_diagonal_element(process_inputs, process_inputs, s_w),
            s_vv: DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(s_v)),
        }
    }

    pub fn validate(&self, process_inputs: usize, channels: usize) -> Result<()> {
        check_psd("s_ww", &self.s_ww, process_inputs)?;
        check_psd("s_vv", &self.s_vv, channels)
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        NoiseModel {
            s_ww: &self.s_ww * alpha,
            s_vv: &self.s_vv * alpha,
        }
    }
}

/// False for NaN.
fn positive(x: f64) -> bool {
    x > 0.0
}

fn check_psd(field: &'static str, s: &DMatrix<f64>, dim: usize) -> Result<()> {
    if s.shape() != (dim, dim) {
        return Err(Error::DimensionMismatch {
            what: field,
            expected: dim,
            found: s.nrows().max(s.ncols()),
        });
    }
    if s.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid(field, "must be finite"));
    }
    let scale = s.amax();
    if (s - s.transpose()).amax() > 1e-12 * scale {
        return Err(Error::invalid(field, "must be symmetric"));
    }
    if dim > 0 && s.clone().symmetric_eigen().eigenvalues.min() < -1e-10 * scale {
        return Err(Error::invalid(field, "must be positive semidefinite"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSettings {
    /// Log-spaced points between `omega_max * 10^-decades` and `omega_max`.
    pub log_points: usize,
    pub decades: f64,
    /// `omega_max` as a multiple of the highest undamped modal frequency.
    pub span_factor: f64,
    /// Linear points added around each modal frequency.
    pub peak_points: usize,
    /// Half-width of each refinement band, relative to the modal frequency.
    pub peak_halfwidth: f64,
}

impl Default for GridSettings {
    fn default() -> Self {
        GridSettings {
            log_points: 2048,
            decades: 3.0,
            span_factor: 4.0,
            peak_points: 64,
            peak_halfwidth: 0.1,
        }
    }
}

impl GridSettings {
    /// Same layout with twice the point density.
    pub fn doubled(&self) -> Self {
        GridSettings {
            log_points: 2 * self.log_points,
            peak_points: 2 * self.peak_points,
            ..*self
        }
    }
}

/// Quadrature nodes on `[0, omega_max]` with trapezoidal weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    pub omegas: Vec<f64>,
    pub weights: Vec<f64>,
}

impl FrequencyGrid {
    pub fn from_points(mut omegas: Vec<f64>) -> Result<Self> {
        if omegas.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("frequency grid", "points must be finite and >= 0"));
        }
        omegas.sort_by(f64::total_cmp);
        omegas.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1e-300));
        if omegas.len() < 2 {
            return Err(Error::invalid("frequency grid", "needs at least two distinct points"));
        }
        let n = omegas.len();
        let mut weights = vec![0.0; n];
        for k in 0..n - 1 {
            let h = 0.5 * (omegas[k + 1] - omegas[k]);
            weights[k] += h;
            weights[k + 1] += h;
        }
        Ok(FrequencyGrid { omegas, weights })
    }

    /// Uniform grid of `n` points on `[0, omega_max]`.
    pub fn uniform(omega_max: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid("frequency grid", "needs at least two points"));
        }
        FrequencyGrid::from_points((0..n).map(|k| omega_max * k as f64 / (n - 1) as f64).collect())
    }

    /// Grid adapted to the undamped modes of `(M, K0)`.
    pub fn for_system(mass: &DMatrix<f64>, k0: &DMatrix<f64>, settings: &GridSettings) -> Result<Self> {
        if settings.log_points < 2 || !positive(settings.decades) || !positive(settings.span_factor) {
            return Err(Error::invalid("frequency grid", "needs >= 2 log points, decades > 0, span_factor > 0"));
        }
        let modes = modal_frequencies(mass, k0)?;
        let top = modes.iter().copied().fold(0.0, f64::max);
        if !positive(top) {
            return Err(Error::invalid("frequency grid", "system has no positive modal frequency"));
        }
        let w_max = settings.span_factor * top;
        let lo = -settings.decades;
        let mut pts = Vec::with_capacity(1 + settings.log_points + modes.len() * settings.peak_points);
        pts.push(0.0);
        for k in 0..settings.log_points {
            let e = lo + (0.0 - lo) * k as f64 / (settings.log_points - 1) as f64;
            pts.push(w_max * libm::pow(10.0, e));
        }
        if settings.peak_points >= 2 {
            for &w in modes.iter().filter(|w| **w > 0.0) {
                let a = w * (1.0 - settings.peak_halfwidth);
                let b = (w * (1.0 + settings.peak_halfwidth)).min(w_max);
                for k in 0..settings.peak_points {
                    pts.push(a + (b - a) * k as f64 / (settings.peak_points - 1) as f64);
                }
            }
        }
        FrequencyGrid::from_points(pts)
    }

    pub fn for_problem(problem: &GainProblem, settings: &GridSettings) -> Result<Self> {
        FrequencyGrid::for_system(&problem.mass, &problem.k0, settings)
    }

    pub fn len(&self) -> usize {
        self.omegas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omegas.is_empty()
    }

    pub fn span(&self) -> f64 {
        self.omegas[self.omegas.len() - 1] - self.omegas[0]
    }
}

fn dynamic_matrix(problem: &GainProblem, c_aug: &DMatrix<f64>, omega: f64) -> DMatrix<C64> {
    let n = problem.n_dof();
    DMatrix::from_fn(n, n, |i, j| {
        C64::new(
            problem.k0[(i, j)] - omega * omega * problem.mass[(i, j)],
            omega * c_aug[(i, j)],
        )
    })
}

/// `H_o(omega)` for diagonal gains.
pub fn error_transfer(problem: &GainProblem, gains: &[f64], omega: f64) -> Result<DMatrix<C64>> {
    problem.check_gains(gains)?;
    let a = dynamic_matrix(problem, &problem.augmented_damping(gains), omega);
    a.try_inverse().ok_or(Error::SingularTransfer { omega })
}

/// Error spectral density `Phi_ee` given `H_o` at one frequency.
pub fn error_psd(h: &DMatrix<C64>, problem: &GainProblem, gains: &[f64], noise: &NoiseModel) -> Result<DMatrix<C64>> {
    problem.check_gains(gains)?;
    noise.validate(problem.noise_inputs(), problem.channels())?;
    let to_c = |m: &DMatrix<f64>| m.map(|x| C64::new(x, 0.0));
    let x1 = h * to_c(&problem.noise_influence);
    let mut ce = DMatrix::<f64>::zeros(problem.n_dof(), problem.channels());
    for (row, (&d, &g)) in problem.measured_dofs.iter().zip(gains).enumerate() {
        ce[(d, row)] = g;
    }
    let x2 = h * to_c(&ce);
    Ok(&x1 * to_c(&noise.s_ww) * x1.adjoint() + &x2 * to_c(&noise.s_vv) * x2.adjoint())
}

/// `Re tr(X S X*)` without forming the product.
fn congruence_trace(x: &DMatrix<C64>, cols: core::ops::Range<usize>, s: &DMatrix<f64>) -> f64 {
    let mut tr = 0.0;
    for i in 0..x.nrows() {
        for (a, k) in cols.clone().enumerate() {
            let xik = x[(i, k)];
            if xik == C64::new(0.0, 0.0) {
                continue;
            }
            for (b, l) in cols.clone().enumerate() {
                let skl = s[(a, b)];
                if skl != 0.0 {
                    tr += skl * (xik * x[(i, l)].conj()).re;
                }
            }
        }
    }
    tr
}

fn integrand(problem: &GainProblem, c_aug: &DMatrix<f64>, rhs: &DMatrix<C64>, noise: &NoiseModel, omega: f64) -> Result<f64> {
    let a = dynamic_matrix(problem, c_aug, omega);
    let x = a.lu().solve(rhs).ok_or(Error::SingularTransfer { omega })?;
    let p = problem.noise_inputs();
    let m = problem.channels();
    let tr = congruence_trace(&x, 0..p, &noise.s_ww) + congruence_trace(&x, p..p + m, &noise.s_vv);
    if tr.is_finite() {
        Ok(tr)
    } else {
        Err(Error::NonFiniteIntegrand { omega })
    }
}

/// `J = tr P = 2 sum_k w_k tr Re Phi_ee(omega_k)`.
pub fn trace_p(problem: &GainProblem, gains: &[f64], noise: &NoiseModel, grid: &FrequencyGrid) -> Result<f64> {
    problem.check_gains(gains)?;
    noise.validate(problem.noise_inputs(), problem.channels())?;
    let n = problem.n_dof();
    let p = problem.noise_inputs();
    let m = problem.channels();
    let c_aug = problem.augmented_damping(gains);
    let mut rhs = DMatrix::<C64>::zeros(n, p + m);
    for i in 0..n {
        for j in 0..p {
            rhs[(i, j)] = C64::new(problem.noise_influence[(i, j)], 0.0);
        }
    }
    for (row, (&d, &g)) in problem.measured_dofs.iter().zip(gains).enumerate() {
        rhs[(d, p + row)] = C64::new(g, 0.0);
    }

    let values = evaluate_grid(problem, &c_aug, &rhs, noise, grid)?;
    let sum: f64 = values.iter().zip(&grid.weights).map(|(v, w)| v * w).sum();
    Ok(2.0 * sum)
}

#[cfg(feature = "parallel")]
fn evaluate_grid(
    problem: &GainProblem,
    c_aug: &DMatrix<f64>,
    rhs: &DMatrix<C64>,
    noise: &NoiseModel,
    grid: &FrequencyGrid,
) -> Result<Vec<f64>> {
    use rayon::prelude::*;
    grid.omegas
        .par_iter()
        .map(|&w| integrand(problem, c_aug, rhs, noise, w))
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn evaluate_grid(
    problem: &GainProblem,
    c_aug: &DMatrix<f64>,
    rhs: &DMatrix<C64>,
    noise: &NoiseModel,
    grid: &FrequencyGrid,
) -> Result<Vec<f64>> {
    grid.omegas
        .iter()
        .map(|&w| integrand(problem, c_aug, rhs, noise, w))
        .collect()
}

/// Per-frequency factorization of the gain-free system, so that
/// `J(E)` costs only `m x m` work per grid point.
///
/// With `A0 = K0 - M w^2 + i w C_D`, `Y = A0^-1 b2` and `Z = A0^-1 c2'`,
/// the augmented inverse follows from the Woodbury identity:
/// `A^-1 b2 = Y - Z (I + i w E c2 Z)^-1 i w E c2 Y` and
/// `A^-1 c2' E = Z (I + i w E c2 Z)^-1 E`.
#[derive(Debug, Clone)]
pub struct TraceEvaluator {
    weights: Vec<f64>,
    omegas: Vec<f64>,
    points: Vec<FactoredPoint>,
    s_ww: DMatrix<f64>,
    s_vv: DMatrix<f64>,
    channels: usize,
}

#[derive(Debug, Clone)]
struct FactoredPoint {
    /// `c2 Z` (m x m).
    zc: DMatrix<C64>,
    /// `c2 Y` (m x p).
    yc: DMatrix<C64>,
    /// `Y* Y` (p x p).
    yy: DMatrix<C64>,
    /// `Z* Y` (m x p).
    zy: DMatrix<C64>,
    /// `Z* Z` (m x m).
    zz: DMatrix<C64>,
}

impl TraceEvaluator {
    pub fn new(problem: &GainProblem, noise: &NoiseModel, grid: &FrequencyGrid) -> Result<Self> {
        noise.validate(problem.noise_inputs(), problem.channels())?;
        let n = problem.n_dof();
        let p = problem.noise_inputs();
        let m = problem.channels();
        let mut rhs = DMatrix::<C64>::zeros(n, p + m);
        for i in 0..n {
            for j in 0..p {
                rhs[(i, j)] = C64::new(problem.noise_influence[(i, j)], 0.0);
            }
        }
        for (row, &d) in problem.measured_dofs.iter().enumerate() {
            rhs[(d, p + row)] = C64::new(1.0, 0.0);
        }
        let points = grid
            .omegas
            .iter()
            .map(|&w| {
                let a = dynamic_matrix(problem, &problem.damping, w);
                let x = a.lu().solve(&rhs).ok_or(Error::SingularTransfer { omega: w })?;
                let y = x.columns(0, p).into_owned();
                let z = x.columns(p, m).into_owned();
                let pick = |mat: &DMatrix<C64>| {
                    DMatrix::from_fn(m, mat.ncols(), |r, c| mat[(problem.measured_dofs[r], c)])
                };
                let pt = FactoredPoint {
                    zc: pick(&z),
                    yc: pick(&y),
                    yy: y.adjoint() * &y,
                    zy: z.adjoint() * &y,
                    zz: z.adjoint() * &z,
                };
                if pt.yy.iter().chain(pt.zz.iter()).any(|v| !(v.re.is_finite() && v.im.is_finite())) {
                    return Err(Error::NonFiniteIntegrand { omega: w });
                }
                Ok(pt)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TraceEvaluator {
            weights: grid.weights.clone(),
            omegas: grid.omegas.clone(),
            points,
            s_ww: noise.s_ww.clone(),
            s_vv: noise.s_vv.clone(),
            channels: m,
        })
    }

    /// `J` for diagonal gains; agrees with [`trace_p`] to round-off.
    pub fn trace(&self, gains: &[f64]) -> Result<f64> {
        let m = self.channels;
        if gains.len() != m {
            return Err(Error::DimensionMismatch {
                what: "feedback gains",
                expected: m,
                found: gains.len(),
            });
        }
        if gains.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(Error::invalid("gains", "must be finite and >= 0"));
        }
        let p = self.s_ww.nrows();
        let s_ww = self.s_ww.map(|x| C64::new(x, 0.0));
        let s_vv = self.s_vv.map(|x| C64::new(x, 0.0));
        let mut sum = 0.0;
        for ((pt, &w), &wt) in self.points.iter().zip(&self.omegas).zip(&self.weights) {
            let iwe: Vec<C64> = gains.iter().map(|g| C64::new(0.0, w * g)).collect();
            let mut lhs = DMatrix::<C64>::identity(m, m);
            let mut rhs = DMatrix::<C64>::zeros(m, p + m);
            for r in 0..m {
                for c in 0..m {
                    lhs[(r, c)] += iwe[r] * pt.zc[(r, c)];
                }
                for c in 0..p {
                    rhs[(r, c)] = iwe[r] * pt.yc[(r, c)];
                }
                rhs[(r, p + r)] = C64::new(gains[r], 0.0);
            }
            let sol = lhs.lu().solve(&rhs).ok_or(Error::SingularTransfer { omega: w })?;
            let w1 = sol.columns(0, p);
            let w2 = sol.columns(p, m);
            let zy_w1 = pt.zy.adjoint() * w1;
            let x1x1 = &pt.yy - &zy_w1 - zy_w1.adjoint() + w1.adjoint() * &pt.zz * w1;
            let x2x2 = w2.adjoint() * &pt.zz * w2;
            let tr = (&s_ww * x1x1).trace().re + (&s_vv * x2x2).trace().re;
            if !tr.is_finite() {
                return Err(Error::NonFiniteIntegrand { omega: w });
            }
            sum += wt * tr;
        }
        Ok(2.0 * sum)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainSettings {
    /// Number of simplex starts.
    pub starts: usize,
    /// Decades of `E` spanned by the starts, centred on the critical
    /// damping scale of each measured DoF.
    pub decades: f64,
    pub simplex: NelderMeadSettings,
}

impl Default for GainSettings {
    fn default() -> Self {
        GainSettings {
            starts: 5,
            decades: 4.0,
            simplex: NelderMeadSettings {
                max_iterations: 300,
                x_tol: 1e-3,
                f_rel_tol: 1e-8,
                initial_step: 0.5,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainDiagnostics {
    pub starts: usize,
    /// Index of the start that produced the returned gain.
    pub best_start: usize,
    pub iterations: usize,
    pub evaluations: usize,
    /// Final simplex size of the best start (log10 units).
    pub simplex_size: f64,
    pub converged: bool,
    /// No start met the simplex tolerances; the best point found is returned.
    pub stagnated: bool,
    /// `E = 0` beat every simplex result.
    pub zero_gain_selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainResult {
    pub measured_dofs: Vec<usize>,
    /// Diagonal of `E` (kN s/m).
    pub e_diagonal: Vec<f64>,
    pub j_at_optimum: f64,
    pub j_at_zero: f64,
    pub j_at_initial: f64,
    pub initial_gains: Vec<f64>,
    pub diagnostics: GainDiagnostics,
}

/// Simplex search over `log10 E_ii` with several starts.
pub fn optimize_gain(
    problem: &GainProblem,
    noise: &NoiseModel,
    grid: &FrequencyGrid,
    settings: &GainSettings,
) -> Result<GainResult> {
    let m = problem.channels();
    if m == 0 {
        return Err(Error::invalid("measured_dofs", "at least one measured DoF is required"));
    }
    if settings.starts == 0 || settings.decades.is_nan() || settings.decades < 0.0 {
        return Err(Error::invalid("gain.starts", "need >= 1 start and decades >= 0"));
    }
    noise.validate(problem.noise_inputs(), m)?;
    let reference = problem.reference_gains();
    let to_gains = |x: &[f64]| -> Vec<f64> {
        reference
            .iter()
            .zip(x)
            .map(|(c, e)| c * libm::pow(10.0, *e))
            .collect()
    };

    let evaluator = TraceEvaluator::new(problem, noise, grid)?;
    let j_zero = evaluator.trace(&vec![0.0; m])?;
    let j_initial = evaluator.trace(&reference)?;

    let offsets: Vec<f64> = if settings.starts == 1 {
        vec![0.0]
    } else {
        (0..settings.starts)
            .map(|k| -0.5 * settings.decades + settings.decades * k as f64 / (settings.starts - 1) as f64)
            .collect()
    };

    let mut best: Option<(usize, crate::optimize::Minimum)> = None;
    let mut iterations = 0;
    let mut evaluations = 0;
    for (k, &off) in offsets.iter().enumerate() {
        let x0 = vec![off; m];
        let min = nelder_mead(
            |x| evaluator.trace(&to_gains(x)).unwrap_or(f64::INFINITY),
            &x0,
            &settings.simplex,
        );
        iterations += min.iterations;
        evaluations += min.evaluations;
        if best.as_ref().is_none_or(|(_, b)| min.f < b.f) {
            best = Some((k, min));
        }
    }
    let (best_start, min) = best.expect("at least one start");

    let (e, j, zero_selected) = if min.f <= j_initial && min.f <= j_zero {
        (to_gains(&min.x), min.f, false)
    } else if j_initial <= j_zero {
        (reference.clone(), j_initial, false)
    } else {
        (vec![0.0; m], j_zero, true)
    };

    Ok(GainResult {
        measured_dofs: problem.measured_dofs.clone(),
        e_diagonal: e,
        j_at_optimum: j,
        j_at_zero: j_zero,
        j_at_initial: j_initial,
        initial_gains: reference,
        diagnostics: GainDiagnostics {
            starts: offsets.len(),
            best_start,
            iterations,
            evaluations,
            simplex_size: min.simplex_size,
            converged: min.converged,
            stagnated: !min.converged,
            zero_gain_selected: zero_selected,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::tests::boxed_building;
    use core::f64::consts::PI;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn cabs(z: C64) -> f64 {
        (z.re * z.re + z.im * z.im).sqrt()
    }

    fn cmax(m: &DMatrix<C64>) -> f64 {
        m.iter().map(|z| cabs(*z)).fold(0.0, f64::max)
    }

    fn sdof(c: f64, k: f64) -> GainProblem {
        GainProblem::new(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, c),
            DMatrix::from_element(1, 1, k),
            DMatrix::from_element(1, 1, 1.0),
            vec![0],
        )
        .unwrap()
    }

    fn closed_form_j(c: f64, k: f64, e: f64, sw: f64, sv: f64) -> f64 {
        PI * (sw + e * e * sv) / (k * (c + e))
    }

    fn sdof_grid(p: &GainProblem) -> FrequencyGrid {
        // wide span so the truncated tail is negligible
        FrequencyGrid::for_problem(
            p,
            &GridSettings {
                span_factor: 200.0,
                decades: 6.0,
                log_points: 4096,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn static_limit_is_k0_inverse() {
        let model = boxed_building(2, 8.0);
        let p = GainProblem::from_model(&model, vec![0, 1]).unwrap();
        let h = error_transfer(&p, &[3.0, 4.0], 0.0).unwrap();
        let k0inv = p.k0.clone().try_inverse().unwrap();
        for (a, b) in h.iter().zip(k0inv.iter()) {
            assert!((a.re - b).abs() < 1e-12 * k0inv.amax() && a.im.abs() < 1e-15);
        }
    }

    #[test]
    fn unit_resonance() {
        let p = sdof(0.1, 1.0);
        let h = error_transfer(&p, &[0.0], 1.0).unwrap();
        assert!(cabs(h[(0, 0)] - C64::new(0.0, -10.0)) < 1e-12);
    }

    #[test]
    fn transfer_inverts_dynamic_matrix_and_is_conjugate_symmetric() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.1, 0.0, 0.1, 1.5, 0.2, 0.0, 0.2, 1.0]);
        let k = DMatrix::from_row_slice(3, 3, &[50.0, -20.0, 0.0, -20.0, 40.0, -15.0, 0.0, -15.0, 15.0]);
        let c = &m * 0.1 + &k * 0.01;
        let p = GainProblem::new(m.clone(), c, k.clone(), DMatrix::identity(3, 3), vec![0, 2]).unwrap();
        let gains = [1.3, 0.4];
        for w in [0.3, 2.7, 6.1] {
            let h = error_transfer(&p, &gains, w).unwrap();
            let a = dynamic_matrix(&p, &p.augmented_damping(&gains), w);
            let id = &h * &a;
            for i in 0..3 {
                for j in 0..3 {
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!(cabs(id[(i, j)] - C64::new(e, 0.0)) < 1e-10);
                }
            }
            let hm = error_transfer(&p, &gains, -w).unwrap();
            assert!(cmax(&(hm - h.conjugate())) < 1e-14);
        }
    }

    #[test]
    fn psd_terms_and_scalar_oracle() {
        let p = sdof(0.2, 2.0);
        let w = 1.3;
        let e = 0.7;
        let h = error_transfer(&p, &[e], w).unwrap();
        let quiet = NoiseModel::white(1, 0.0, &[0.0]);
        assert_eq!(cmax(&error_psd(&h, &p, &[0.0], &quiet).unwrap()), 0.0);
        let proc_only = NoiseModel::white(1, 1.5, &[0.0]);
        let both = NoiseModel::white(1, 1.5, &[0.4]);
        let mag2 = 1.0 / ((2.0 - w * w).powi(2) + (w * (0.2 + e)).powi(2));
        let phi_p = error_psd(&h, &p, &[e], &proc_only).unwrap()[(0, 0)];
        let phi = error_psd(&h, &p, &[e], &both).unwrap()[(0, 0)];
        assert!((phi_p.re - 1.5 * mag2).abs() < 1e-14 && phi_p.im.abs() < 1e-15);
        assert!((phi.re - (1.5 + e * e * 0.4) * mag2).abs() < 1e-14);
    }

    #[test]
    fn psd_is_hermitian_psd_on_building() {
        let model = boxed_building(3, 8.0);
        let p = GainProblem::from_model(&model, vec![0, 1, 2, 6, 7, 8]).unwrap();
        let noise = NoiseModel::white(p.noise_inputs(), 0.3, &[0.01; 6]);
        let gains = [10.0, 40.0, 5.0, 100.0, 1.0, 0.0];
        for w in [0.0, 0.5, 5.0, 20.0, 80.0] {
            let h = error_transfer(&p, &gains, w).unwrap();
            let phi = error_psd(&h, &p, &gains, &noise).unwrap();
            assert!(cmax(&(&phi - phi.adjoint())) < 1e-12 * cmax(&phi).max(1e-300));
            let lam = phi.symmetric_eigenvalues();
            assert!(lam.min() >= -1e-10 * lam.amax().max(1e-300));
        }
    }

    #[test]
    fn trapezoid_weights_reproduce_span() {
        let model = boxed_building(3, 8.0);
        let p = GainProblem::from_model(&model, vec![0]).unwrap();
        let g = FrequencyGrid::for_problem(&p, &GridSettings::default()).unwrap();
        assert_eq!(g.omegas[0], 0.0);
        assert!(g.omegas.windows(2).all(|w| w[1] > w[0]));
        assert!(g.weights.iter().all(|w| *w > 0.0));
        let total: f64 = g.weights.iter().sum();
        assert!((total - g.span()).abs() <= 1e-12 * g.span());
    }

    #[test]
    fn zero_noise_and_linear_scaling() {
        let model = boxed_building(2, 8.0);
        let p = GainProblem::from_model(&model, vec![0, 1]).unwrap();
        let grid = FrequencyGrid::for_problem(&p, &GridSettings::default()).unwrap();
        let quiet = NoiseModel::white(p.noise_inputs(), 0.0, &[0.0, 0.0]);
        assert_eq!(trace_p(&p, &[5.0, 5.0], &quiet, &grid).unwrap(), 0.0);
        let noise = NoiseModel::white(p.noise_inputs(), 0.2, &[0.01, 0.03]);
        let j = trace_p(&p, &[5.0, 50.0], &noise, &grid).unwrap();
        let j3 = trace_p(&p, &[5.0, 50.0], &noise.scaled(3.0), &grid).unwrap();
        assert!(j > 0.0);
        assert!((j3 - 3.0 * j).abs() < 1e-12 * j3);
    }

    #[test]
    fn sdof_trace_matches_closed_form() {
        let (c, k, sw, sv) = (0.05, 1.0, 1.0, 0.5);
        let p = sdof(c, k);
        let grid = sdof_grid(&p);
        for e in [0.0, 0.1, 1.0, 5.0] {
            let j = trace_p(&p, &[e], &NoiseModel::white(1, sw, &[sv]), &grid).unwrap();
            let exact = closed_form_j(c, k, e, sw, sv);
            assert!((j - exact).abs() / exact < 2e-3, "E = {e}: {j} vs {exact}");
        }
    }

    #[test]
    fn quadrature_converges_on_default_grid() {
        let model = boxed_building(3, 8.0);
        let p = GainProblem::from_model(&model, vec![6, 7, 8]).unwrap();
        let noise = NoiseModel::white(p.noise_inputs(), 0.1, &[0.001; 3]);
        let gains = [20.0, 20.0, 20.0];
        let g1 = FrequencyGrid::for_problem(&p, &GridSettings::default()).unwrap();
        let g2 = FrequencyGrid::for_problem(&p, &GridSettings::default().doubled()).unwrap();
        let j1 = trace_p(&p, &gains, &noise, &g1).unwrap();
        let j2 = trace_p(&p, &gains, &noise, &g2).unwrap();
        assert!((j1 - j2).abs() / j2 < 1e-3, "{j1} vs {j2}");
    }

    #[test]
    fn factored_trace_matches_direct() {
        let model = boxed_building(3, 8.0);
        let p = GainProblem::from_model(&model, vec![0, 1, 2, 6, 7, 8]).unwrap();
        let noise = NoiseModel {
            s_ww: DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.1, 0.2]),
            s_vv: DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&[1e-3, 2e-3, 1e-4, 1e-3, 5e-4, 1e-4])),
        };
        let grid = FrequencyGrid::for_problem(&p, &GridSettings::default()).unwrap();
        let ev = TraceEvaluator::new(&p, &noise, &grid).unwrap();
        for gains in [[0.0; 6], [10.0, 40.0, 5.0, 100.0, 1.0, 0.0], [1e5, 1e5, 1e6, 1e4, 1e4, 1e6]] {
            let direct = trace_p(&p, &gains, &noise, &grid).unwrap();
            let fast = ev.trace(&gains).unwrap();
            assert!((direct - fast).abs() <= 1e-8 * direct, "{gains:?}: {direct} vs {fast}");
        }
    }

    #[test]
    fn undamped_resonance_on_grid_is_flagged() {
        let p = GainProblem::new(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 4.0),
            DMatrix::from_element(1, 1, 1.0),
            vec![0],
        )
        .unwrap();
        let grid = FrequencyGrid::uniform(4.0, 5).unwrap();
        let err = trace_p(&p, &[0.0], &NoiseModel::white(1, 1.0, &[1.0]), &grid).unwrap_err();
        assert!(matches!(err, Error::SingularTransfer { .. } | Error::NonFiniteIntegrand { .. }), "{err:?}");
    }

    #[test]
    fn noise_model_validation() {
        let bad = NoiseModel {
            s_ww: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]),
            s_vv: DMatrix::identity(1, 1),
        };
        assert!(bad.validate(2, 1).is_err());
        assert!(NoiseModel::white(2, 1.0, &[-1.0]).validate(2, 1).is_err());
        assert!(NoiseModel::white(2, 1.0, &[1.0]).validate(3, 1).is_err());
    }

    #[test]
    fn sdof_optimum_matches_closed_form_and_grid_search() {
        let (c, k, sw, sv) = (0.05, 1.0, 1.0, 0.5);
        let p = sdof(c, k);
        let grid = sdof_grid(&p);
        let noise = NoiseModel::white(1, sw, &[sv]);
        let res = optimize_gain(&p, &noise, &grid, &GainSettings::default()).unwrap();
        let exact = -c + (c * c + sw / sv).sqrt();
        let e = res.e_diagonal[0];
        assert!((e - exact).abs() / exact < 0.01, "{e} vs {exact}");
        assert!(res.j_at_optimum <= res.j_at_zero && res.j_at_optimum <= res.j_at_initial);

        let n = 200;
        let (lo, hi) = (-3.0f64, 3.0f64);
        let cells: Vec<f64> = (0..n).map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (n - 1) as f64)).collect();
        let js: Vec<f64> = cells
            .iter()
            .map(|&e| trace_p(&p, &[e], &noise, &grid).unwrap())
            .collect();
        let best = (0..n).min_by(|&a, &b| js[a].total_cmp(&js[b])).unwrap();
        let step = (hi - lo) / (n - 1) as f64;
        assert!((e.log10() - cells[best].log10()).abs() <= step, "{e} vs grid {}", cells[best]);
    }

    #[test]
    fn useless_measurements_drive_gain_to_zero() {
        let p = sdof(0.05, 1.0);
        let grid = sdof_grid(&p);
        let res = optimize_gain(&p, &NoiseModel::white(1, 1.0, &[1e8]), &grid, &GainSettings::default()).unwrap();
        assert!(res.e_diagonal[0] < 1e-3, "{:?}", res.e_diagonal);
        assert!(res.j_at_optimum <= res.j_at_zero);
    }

    #[test]
    fn monte_carlo_matches_frequency_domain() {
        // e'' + (c + E) e' + k e = w - E v, white w and v
        let (c, k, e, sw, sv) = (0.1, 1.0, 0.4, 1.0, 0.2);
        let p = sdof(c, k);
        let j = trace_p(&p, &[e], &NoiseModel::white(1, sw, &[sv]), &sdof_grid(&p)).unwrap();

        let dt = 0.05;
        let steps = 400_000;
        let sd_w = (2.0 * PI * sw / dt).sqrt();
        let sd_v = (2.0 * PI * sv / dt).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
        let ct = c + e;
        let keff = k + 2.0 * ct / dt + 4.0 / (dt * dt);
        let (mut x, mut v) = (0.0f64, 0.0f64);
        let mut f_prev = sd_w * draw() - e * sd_v * draw();
        let mut a = f_prev - ct * v - k * x;
        let mut sum2 = 0.0;
        let burn = 5_000;
        for i in 0..steps {
            let f = sd_w * draw() - e * sd_v * draw();
            let rhs = f + (4.0 / (dt * dt)) * x + (4.0 / dt) * v + a + ct * ((2.0 / dt) * x + v);
            let x1 = rhs / keff;
            let v1 = 2.0 * (x1 - x) / dt - v;
            let a1 = 4.0 * (x1 - x) / (dt * dt) - 4.0 * v / dt - a;
            x = x1;
            v = v1;
            a = a1;
            f_prev = f;
            if i >= burn {
                sum2 += x * x;
            }
        }
        let _ = f_prev;
        let var = sum2 / (steps - burn) as f64;
        assert!((var - j).abs() / j < 0.05, "time domain {var} vs {j}");
    }
}
