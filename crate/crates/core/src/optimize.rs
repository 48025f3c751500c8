//! Derivative-free Nelder-Mead simplex minimization.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NelderMeadSettings {
    pub max_iterations: usize,
    /// Stop once every vertex lies within this distance of the best one.
    pub x_tol: f64,
    /// ... and the spread of function values is below this fraction of the best.
    pub f_rel_tol: f64,
    /// Edge length of the initial simplex.
    pub initial_step: f64,
}

impl Default for NelderMeadSettings {
    fn default() -> Self {
        NelderMeadSettings {
            max_iterations: 400,
            x_tol: 1e-4,
            f_rel_tol: 1e-9,
            initial_step: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// Largest vertex distance from the best vertex at exit.
    pub simplex_size: f64,
    pub converged: bool,
}

/// Minimize `f` from `x0` with the standard coefficients
/// (reflection 1, expansion 2, contraction 1/2, shrink 1/2).
///
/// Non-finite function values are treated as `+inf`, so the simplex
/// retreats from regions where the objective blows up.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], settings: &NelderMeadSettings) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut evaluations = 0usize;
    let mut eval = |x: &[f64]| {
        evaluations += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += settings.initial_step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| eval(x)).collect();

    let mut iterations = 0;
    let mut converged = false;
    let mut size = f64::INFINITY;
    while iterations < settings.max_iterations {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        size = simplex_size(&simplex);
        let spread = values[n] - values[0];
        let f_ok = spread.is_finite() && spread <= settings.f_rel_tol * values[0].abs().max(f64::MIN_POSITIVE);
        if size <= settings.x_tol && (f_ok || spread == 0.0) || n == 0 {
            converged = true;
            break;
        }
        iterations += 1;

        let mut centroid = alloc::vec![0.0; n];
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let xr = along(1.0);
        let fr = eval(&xr);
        if fr < values[0] {
            let xe = along(2.0);
            let fe = eval(&xe);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[n] {
            let xc = along(0.5);
            let fc = eval(&xc);
            (xc, fc)
        } else {
            let xc = along(-0.5);
            let fc = eval(&xc);
            (xc, fc)
        };
        if fc < values[n].min(fr) {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        let best = simplex[0].clone();
        for i in 1..=n {
            for (x, b) in simplex[i].iter_mut().zip(&best) {
                *x = b + 0.5 * (*x - b);
            }
            values[i] = eval(&simplex[i]);
        }
    }

    let mut best = 0;
    for i in 1..values.len() {
        if values[i] < values[best] {
            best = i;
        }
    }
    Minimum {
        x: simplex[best].clone(),
        f: values[best],
        iterations,
        evaluations,
        simplex_size: if size.is_finite() { size } else { simplex_size(&simplex) },
        converged,
    }
}

fn simplex_size(simplex: &[Vec<f64>]) -> f64 {
    let best = &simplex[0];
    simplex[1..]
        .iter()
        .map(|v| {
            libm::sqrt(v.iter().zip(best).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl() {
        let m = nelder_mead(
            |x| (x[0] - 1.0).powi(2) + 4.0 * (x[1] + 2.0).powi(2) + 3.0,
            &[0.0, 0.0],
            &NelderMeadSettings {
                x_tol: 1e-8,
                f_rel_tol: 1e-15,
                ..Default::default()
            },
        );
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] + 2.0).abs() < 1e-6, "{:?}", m.x);
        assert!((m.f - 3.0).abs() < 1e-12);
    }

    #[test]
    fn rosenbrock() {
        let m = nelder_mead(
            |x| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2),
            &[-1.2, 1.0],
            &NelderMeadSettings {
                max_iterations: 2000,
                x_tol: 1e-9,
                f_rel_tol: 0.0,
                initial_step: 0.5,
            },
        );
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5, "{m:?}");
    }

    #[test]
    fn one_dimensional() {
        let m = nelder_mead(|x| (x[0] - 0.3).abs(), &[5.0], &Default::default());
        assert!((m.x[0] - 0.3).abs() < 1e-3);
    }

    #[test]
    fn never_worse_than_start() {
        let f = |x: &[f64]| (x[0] * 3.0).sin() + 0.1 * x[0] * x[0];
        let m = nelder_mead(f, &[0.7], &Default::default());
        assert!(m.f <= f(&[0.7]));
    }

    #[test]
    fn nan_regions_are_avoided() {
        let m = nelder_mead(
            |x| if x[0] < 0.0 { f64::NAN } else { (x[0] - 0.5).powi(2) },
            &[2.0],
            &Default::default(),
        );
        assert!(m.f.is_finite());
        assert!((m.x[0] - 0.5).abs() < 1e-3);
    }
}
