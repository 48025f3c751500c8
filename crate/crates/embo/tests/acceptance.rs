//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! A criterion listed in `KNOWN_FAILURES` is still evaluated and printed
//! as FAIL; the suite only errors if the set of failing criteria differs
//! from that list, in either direction.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::time::{Duration, Instant};

use embo::pipeline::VerifySummary;
use embo::{fixture, io, Command, RunError, RunOptions, Session};
use embo_core::damage::{damage_index, psi, PsiCoefficients};
use embo_core::dynamics::{observe, simulate, ObserverConfig, ResponseHistory};
use embo_core::gain::{optimize_gain, trace_p, FrequencyGrid, GainProblem, GainSettings, GridSettings, NoiseModel};
use embo_core::hysteresis::{step_wall, unloading_stiffness, HystereticWallState, SawsParameters, WallDamageParams, WallStep};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Criteria that fail on the bundled fixture, with the reason.
const KNOWN_FAILURES: &[(u32, &str)] = &[(
    3,
    "observer has no ground-motion input, so floors between the measured ones lag; \
     energy error grows faster than drift error",
)];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn sdof(c: f64, k: f64) -> GainProblem {
    let one = |x: f64| DMatrix::from_element(1, 1, x);
    GainProblem::new(one(1.0), one(c), one(k), one(1.0), vec![0]).unwrap()
}

fn sdof_grid(p: &GainProblem) -> FrequencyGrid {
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

fn criterion_1() -> Outcome {
    let t0 = Instant::now();
    // e'' + (c + E) e' + k e = w - E v with white w and v
    let (c, k, e, sw, sv) = (0.1, 1.0, 0.4, 1.0, 0.2);
    let p = sdof(c, k);
    let j = trace_p(&p, &[e], &NoiseModel::white(1, sw, &[sv]), &sdof_grid(&p)).unwrap();

    let dt = 0.05;
    let steps = 1_200_000;
    let burn = 10_000;
    let sd_w = (2.0 * PI * sw / dt).sqrt();
    let sd_v = (2.0 * PI * sv / dt).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
    let ct = c + e;
    let keff = k + 2.0 * ct / dt + 4.0 / (dt * dt);
    let (mut x, mut v) = (0.0f64, 0.0f64);
    let mut a = sd_w * draw() - e * sd_v * draw();
    let mut sum2 = 0.0;
    for i in 0..steps {
        let f = sd_w * draw() - e * sd_v * draw();
        let rhs = f + (4.0 / (dt * dt)) * x + (4.0 / dt) * v + a + ct * ((2.0 / dt) * x + v);
        let x1 = rhs / keff;
        let v1 = 2.0 * (x1 - x) / dt - v;
        a = 4.0 * (x1 - x) / (dt * dt) - 4.0 * v / dt - a;
        x = x1;
        v = v1;
        if i >= burn {
            sum2 += x * x;
        }
    }
    let var = sum2 / (steps - burn) as f64;
    let rel = (var - j).abs() / j;
    let elapsed = t0.elapsed();
    outcome(
        rel < 0.05 && elapsed < Duration::from_secs(60),
        format!("trace_P {j:.5}, Monte Carlo ({steps} steps) {var:.5}, rel {rel:.4} < 0.05, {:.1}s < 60s", elapsed.as_secs_f64()),
    )
}

fn criterion_2() -> Outcome {
    let t0 = Instant::now();
    let (c, k, sw, sv) = (0.05, 1.0, 1.0, 0.5);
    let p = sdof(c, k);
    let grid = sdof_grid(&p);
    let noise = NoiseModel::white(1, sw, &[sv]);
    let res = optimize_gain(&p, &noise, &grid, &GainSettings::default()).unwrap();
    let e = res.e_diagonal[0];

    let n = 200;
    let (lo, hi) = (-3.0f64, 3.0f64);
    let step = (hi - lo) / (n - 1) as f64;
    let cells: Vec<f64> = (0..n).map(|i| 10f64.powf(lo + step * i as f64)).collect();
    let js: Vec<f64> = cells.iter().map(|&g| trace_p(&p, &[g], &noise, &grid).unwrap()).collect();
    let best = (0..n).min_by(|&a, &b| js[a].total_cmp(&js[b])).unwrap();
    let cells_off = (e.log10() - cells[best].log10()).abs() / step;
    let elapsed = t0.elapsed();
    outcome(
        cells_off <= 1.0 && elapsed < Duration::from_secs(60),
        format!(
            "E* {e:.5}, grid best {:.5}, {cells_off:.2} cells apart <= 1, {:.1}s < 60s",
            cells[best],
            elapsed.as_secs_f64()
        ),
    )
}

struct FixtureRuns {
    first: Result<(), RunError>,
    elapsed: Duration,
    files: [BTreeMap<String, Vec<u8>>; 2],
    verify: VerifySummary,
}

fn data_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| !p.to_string_lossy().ends_with(".manifest.json"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

fn fixture_runs(dir: &Path) -> FixtureRuns {
    let cfg = fixture::write_six_story(dir).unwrap();
    let opts = |name: &str| RunOptions {
        out: Some(dir.join(name)),
        ..Default::default()
    };
    let t0 = Instant::now();
    let first = embo::run(Command::Verify, &cfg, &opts("first")).map(|_| ());
    let elapsed = t0.elapsed();
    let second = embo::run(Command::Verify, &cfg, &opts("second")).map(|_| ());
    assert_eq!(first.is_ok(), second.is_ok());
    if let Err(e) = &first {
        assert!(matches!(e, RunError::Verification(_)), "fixture verify crashed: {e}");
    }
    FixtureRuns {
        first,
        elapsed,
        files: [data_files(&dir.join("first")), data_files(&dir.join("second"))],
        verify: io::read_json(&dir.join("first").join("verify.json")).unwrap(),
    }
}

fn criterion_3(runs: &FixtureRuns) -> Outcome {
    let v = &runs.verify;
    let drift_ok = v.worst_unmeasured_drift_error < 0.15;
    let energy_ok = v.worst_wall_energy_error <= 0.20;
    let nonlinear = v.max_true_di > 0.3;
    let fast = runs.elapsed < Duration::from_secs(300);
    outcome(
        drift_ok && energy_ok && nonlinear && fast,
        format!(
            "worst unmeasured drift error {:.4} < 0.15 [{}]; worst wall energy error {:.4} <= 0.20 [{}]; \
             true max DI {:.2}; {:.1}s < 300s; verify exit {}",
            v.worst_unmeasured_drift_error,
            if drift_ok { "ok" } else { "no" },
            v.worst_wall_energy_error,
            if energy_ok { "ok" } else { "no" },
            v.max_true_di,
            runs.elapsed.as_secs_f64(),
            runs.first.as_ref().err().map_or(0, RunError::exit_code),
        ),
    )
}

fn bits(m: &DMatrix<f64>) -> Vec<u64> {
    m.iter().map(|x| x.to_bits()).collect()
}

fn criterion_4(session: &Session) -> Outcome {
    let model = &session.model;
    let settings = &session.settings;
    let n = model.n_dof();
    let steps = session.ground.len();

    let dofs = session.config().measured_dofs();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let y = DMatrix::from_fn(dofs.len(), steps, |_, _| rng.random_range(-0.5..0.5));
    let zero = observe(model, &ObserverConfig::new(dofs.clone(), vec![0.0; dofs.len()], n).unwrap(), &y, settings).unwrap();
    let rest = simulate(model, &DMatrix::zeros(2, steps), settings).unwrap();
    let same = |f: fn(&ResponseHistory) -> &DMatrix<f64>| bits(f(&zero)) == bits(f(&rest));
    let bitwise = same(|h| &h.q) && same(|h| &h.dq) && same(|h| &h.ddq) && same(|h| &h.wall_forces) && same(|h| &h.wall_energies);

    let truth = simulate(model, &session.ground.to_matrix(), settings).unwrap();
    let all: Vec<usize> = (0..n).collect();
    let gains: Vec<f64> = (0..=10).map(|i| 10f64.powf(1.0 + 0.5 * i as f64)).collect();
    let errs: Vec<f64> = gains
        .iter()
        .map(|&g| {
            let est = observe(model, &ObserverConfig::new(all.clone(), vec![g; n], n).unwrap(), &truth.dq, settings).unwrap();
            (&est.q - &truth.q).norm() / truth.q.norm()
        })
        .collect();
    let best = (0..errs.len()).min_by(|&a, &b| errs[a].total_cmp(&errs[b])).unwrap();
    let monotone = best > 0 && errs[..=best].windows(2).all(|w| w[1] < w[0]);
    let shown: Vec<String> = errs.iter().map(|e| format!("{e:.2e}")).collect();
    outcome(
        bitwise && monotone,
        format!(
            "E = 0 matches unforced response bitwise [{}]; RMS error over E = 1e1..1e6: {} [{}]",
            if bitwise { "ok" } else { "no" },
            shown.join(" "),
            if monotone { "decreasing" } else { "not decreasing" }
        ),
    )
}

fn criterion_5(session: &Session) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut runs = Vec::new();
    for scale in [0.0, 0.25, 1.0, 2.0] {
        let ug = session.ground.to_matrix() * scale;
        let h = simulate(&session.model, &ug, &session.settings).unwrap();
        let err = h.energy.max_relative_error();
        worst = worst.max(err);
        runs.push(format!("x{scale}: {err:.1e}"));
    }
    let walls = session.model.with_scaled_walls(0.5).unwrap();
    let h = simulate(&walls, &session.ground.to_matrix(), &session.settings).unwrap();
    worst = worst.max(h.energy.max_relative_error());
    runs.push(format!("soft walls: {:.1e}", h.energy.max_relative_error()));
    outcome(worst < 0.01, format!("max ledger imbalance {worst:.2e} < 0.01 ({})", runs.join(", ")))
}

fn walk(p: &SawsParameters, drifts: &[f64]) -> Vec<WallStep> {
    let mut s = HystereticWallState::virgin();
    drifts
        .iter()
        .map(|&d| {
            let step = step_wall(&s, p, d);
            s = step.state;
            step
        })
        .collect()
}

fn leg(from: f64, to: f64, n: usize) -> impl Iterator<Item = f64> {
    (1..=n).map(move |i| from + (to - from) * i as f64 / n as f64)
}

fn criterion_6(session: &Session) -> Outcome {
    let mut worst_loop: f64 = 0.0;
    let mut params: Vec<SawsParameters> = session.model.walls.iter().map(|w| w.params).collect();
    params.dedup();
    for p in &params {
        for amp in [0.2, 0.5, 1.0, 1.5].map(|f| f * p.du) {
            let cycle = |n: usize| -> Vec<f64> {
                leg(0.0, amp, n)
                    .chain(leg(amp, -amp, 2 * n))
                    .chain(leg(-amp, 0.0, n))
                    .collect()
            };
            let coarse = walk(p, &cycle(40));
            let fine = walk(p, &cycle(4000));
            let mut work = 0.0;
            let (mut d0, mut f0) = (0.0, 0.0);
            for s in &fine {
                work += 0.5 * (f0 + s.force) * (s.state.d - d0);
                d0 = s.state.d;
                f0 = s.force;
            }
            let end = coarse.last().unwrap();
            let expected = work - 0.5 * end.force * end.force / unloading_stiffness(p);
            worst_loop = worst_loop.max((end.state.e_hyst - expected).abs() / expected);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut checked, mut worst_tangent) = (0usize, 0.0f64);
    for p in &params {
        for _ in 0..200 {
            let mut d = 0.0;
            let mut s = HystereticWallState::virgin();
            for _ in 0..40 {
                let x: f64 = rng.random_range(-1.5..1.5);
                d += x * x * x * p.du;
                s = step_wall(&s, p, d).state;
                let h = rng.random_range(1e-5..1e-3) * p.du;
                let sign = if s.direction == embo_core::hysteresis::Direction::Negative { -1.0 } else { 1.0 };
                let a = step_wall(&s, p, s.d + sign * h);
                let mid = step_wall(&s, p, s.d + sign * 2.0 * h);
                let b = step_wall(&s, p, s.d + sign * 3.0 * h);
                if a.state.branch != mid.state.branch || b.state.branch != mid.state.branch {
                    continue;
                }
                let fd = (b.force - a.force) / (sign * 2.0 * h);
                let scale = mid.tangent.abs().max(1e-7 * p.s0);
                worst_tangent = worst_tangent.max((fd - mid.tangent).abs() / scale);
                checked += 1;
            }
        }
    }
    outcome(
        worst_loop < 5e-3 && worst_tangent < 0.01,
        format!(
            "loop dissipation vs 100x quadrature {worst_loop:.2e} < 5e-3 ({} wall types x 4 amplitudes); \
             tangent vs finite difference {worst_tangent:.2e} < 0.01 ({checked} points)",
            params.len()
        ),
    )
}

fn criterion_7() -> Outcome {
    let b = PsiCoefficients::default();
    let p = psi(&b, 4.0, 0.5);
    let psi_ok = p == 1.553 && (b.beta0, b.beta1, b.beta2) == (1.121, 0.014, 0.026);

    let dp = WallDamageParams {
        delta_u: 80.0,
        f_ey: 12.0,
        x_ns: 4.0,
        x_wh: 0.5,
    };
    let (f, d) = (9.0, 35.0);
    let r = damage_index("w", 1, &[-d, d, d, -d, -d], &[f, f, -f, -f, f], &dp, &b, f64::INFINITY).unwrap();
    let closed = d / dp.delta_u + p * 4.0 * f * d / (dp.f_ey * dp.delta_u);
    let rect_err = (r.di - closed).abs() / closed;
    let rect_ok = rect_err <= 4.0 * f64::EPSILON;

    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mut violations = 0;
    for _ in 0..1000 {
        let (nh, nt) = (rng.random_range(1..40), rng.random_range(1..40));
        let mut pt = || -> (f64, f64) { (rng.random_range(-100.0..100.0), rng.random_range(-15.0..15.0)) };
        let head: Vec<(f64, f64)> = (0..nh).map(|_| pt()).collect();
        let tail: Vec<(f64, f64)> = (0..nt).map(|_| pt()).collect();
        let k = rng.random_range(0.5..50.0);
        let (d1, f1): (Vec<f64>, Vec<f64>) = head.iter().copied().unzip();
        let (d2, f2): (Vec<f64>, Vec<f64>) = head.iter().chain(&tail).copied().unzip();
        let a = damage_index("w", 1, &d1, &f1, &dp, &b, k).unwrap();
        let c = damage_index("w", 1, &d2, &f2, &dp, &b, k).unwrap();
        if c.di < a.di || c.e_hyst_total < a.e_hyst_total || c.delta_m < a.delta_m {
            violations += 1;
        }
    }
    outcome(
        psi_ok && rect_ok && violations == 0,
        format!("psi(4, 0.5) = {p}; rectangular loop rel error {rect_err:.1e}; {violations} monotonicity violations in 1000 extensions"),
    )
}

fn criterion_8(runs: &FixtureRuns) -> Outcome {
    let [a, b] = &runs.files;
    let differing: Vec<&String> = a.keys().filter(|k| b.get(*k) != Some(&a[*k])).collect();
    let same_set = a.keys().eq(b.keys());
    outcome(
        same_set && differing.is_empty() && !a.is_empty(),
        format!("{} data files compared across two verify runs, {} differ", a.len(), differing.len()),
    )
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let runs = fixture_runs(dir.path());
    let session = Session::open(&dir.path().join("six_story.toml"), &RunOptions::default()).unwrap();

    let results = [
        (1, criterion_1()),
        (2, criterion_2()),
        (3, criterion_3(&runs)),
        (4, criterion_4(&session)),
        (5, criterion_5(&session)),
        (6, criterion_6(&session)),
        (7, criterion_7()),
        (8, criterion_8(&runs)),
    ];
    let mut failing = Vec::new();
    for (n, o) in &results {
        let known = KNOWN_FAILURES.iter().find(|(k, _)| k == n);
        let note = match (o.pass, known) {
            (false, Some((_, why))) => format!(" (known failure: {why})"),
            _ => String::new(),
        };
        println!("criterion {n}: {} - {}{note}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failing.push(*n);
        }
    }
    let known: Vec<u32> = KNOWN_FAILURES.iter().map(|(n, _)| *n).collect();
    if failing != known {
        eprintln!("failing criteria {failing:?} differ from the known-failure list {known:?}");
        std::process::exit(1);
    }
    println!("acceptance: {} of {} criteria pass; failures match the known list", results.len() - failing.len(), results.len());
}
