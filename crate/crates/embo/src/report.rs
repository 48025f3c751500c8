//! Estimate-vs-truth comparison metrics, damage tables and SVG charts.

use std::fmt::Write as _;

use embo_core::damage::DamageReport;
use embo_core::dynamics::ResponseHistory;
use embo_core::structure::{BuildingModel, MM_PER_M};
use serde::{Deserialize, Serialize};

use crate::io::{fmt_f64, table_bytes};

/// `|estimate - truth| / |truth|`; infinite for a zero truth and a
/// nonzero estimate.
pub fn relative_error(estimate: f64, truth: f64) -> f64 {
    let d = (estimate - truth).abs();
    if truth.abs() > 0.0 {
        d / truth.abs()
    } else if d == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

fn peak(xs: impl Iterator<Item = f64>) -> f64 {
    xs.fold(0.0f64, |m, x| m.max(x.abs()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoryError {
    pub story: usize,
    /// `x` or `y`.
    pub axis: String,
    pub measured: bool,
    pub true_peak_drift_mm: f64,
    pub est_peak_drift_mm: f64,
    pub drift_error: f64,
    pub true_peak_displacement_mm: f64,
    pub est_peak_displacement_mm: f64,
    pub displacement_error: f64,
    /// RMS of the displacement error over the RMS of the truth.
    pub displacement_rms_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallError {
    pub wall_id: String,
    pub story: usize,
    pub true_peak_drift_mm: f64,
    pub est_peak_drift_mm: f64,
    pub drift_error: f64,
    pub true_energy_kn_mm: f64,
    pub est_energy_kn_mm: f64,
    pub energy_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub stories: Vec<StoryError>,
    pub walls: Vec<WallError>,
    /// Worst peak-drift error over stories without sensors.
    pub worst_unmeasured_drift_error: f64,
    pub worst_unmeasured_displacement_error: f64,
    pub worst_wall_energy_error: f64,
    pub worst_wall_drift_error: f64,
}

/// Peak-response errors per story (lateral axes) and per wall.
/// `measured_stories` are the stories carrying sensors.
pub fn compare(model: &BuildingModel, truth: &ResponseHistory, est: &ResponseHistory, measured_stories: &[usize]) -> Comparison {
    let steps = truth.steps().min(est.steps());
    let n_stories = model.layout.n_stories();
    let mut stories = Vec::new();
    for s in 1..=n_stories {
        for (a, axis) in ["x", "y"].iter().enumerate() {
            let d = (s - 1) * 3 + a;
            let drift = |h: &ResponseHistory| {
                peak((0..steps).map(|k| h.q[(d, k)] - if s > 1 { h.q[(d - 3, k)] } else { 0.0 })) * MM_PER_M
            };
            let disp = |h: &ResponseHistory| peak((0..steps).map(|k| h.q[(d, k)])) * MM_PER_M;
            let (td, ed) = (drift(truth), drift(est));
            let (tu, eu) = (disp(truth), disp(est));
            let mut num = 0.0;
            let mut den = 0.0;
            for k in 0..steps {
                num += (est.q[(d, k)] - truth.q[(d, k)]).powi(2);
                den += truth.q[(d, k)].powi(2);
            }
            stories.push(StoryError {
                story: s,
                axis: axis.to_string(),
                measured: measured_stories.contains(&s),
                true_peak_drift_mm: td,
                est_peak_drift_mm: ed,
                drift_error: relative_error(ed, td),
                true_peak_displacement_mm: tu,
                est_peak_displacement_mm: eu,
                displacement_error: relative_error(eu, tu),
                displacement_rms_error: if den > 0.0 { (num / den).sqrt() } else if num == 0.0 { 0.0 } else { f64::INFINITY },
            });
        }
    }
    let last = steps.saturating_sub(1);
    let walls: Vec<WallError> = model
        .walls
        .iter()
        .enumerate()
        .map(|(w, wall)| {
            let td = peak((0..steps).map(|k| truth.wall_drifts[(w, k)]));
            let ed = peak((0..steps).map(|k| est.wall_drifts[(w, k)]));
            let te = truth.wall_energies[(w, last)];
            let ee = est.wall_energies[(w, last)];
            WallError {
                wall_id: wall.id.clone(),
                story: wall.story,
                true_peak_drift_mm: td,
                est_peak_drift_mm: ed,
                drift_error: relative_error(ed, td),
                true_energy_kn_mm: te,
                est_energy_kn_mm: ee,
                energy_error: relative_error(ee, te),
            }
        })
        .collect();
    let worst = |it: &mut dyn Iterator<Item = f64>| it.fold(0.0f64, f64::max);
    Comparison {
        worst_unmeasured_drift_error: worst(&mut stories.iter().filter(|s| !s.measured).map(|s| s.drift_error)),
        worst_unmeasured_displacement_error: worst(&mut stories.iter().filter(|s| !s.measured).map(|s| s.displacement_error)),
        worst_wall_energy_error: worst(&mut walls.iter().map(|w| w.energy_error)),
        worst_wall_drift_error: worst(&mut walls.iter().map(|w| w.drift_error)),
        stories,
        walls,
    }
}

pub fn story_errors_csv(c: &Comparison) -> Vec<u8> {
    let rows: Vec<Vec<String>> = c
        .stories
        .iter()
        .map(|s| {
            vec![
                s.story.to_string(),
                s.axis.clone(),
                s.measured.to_string(),
                fmt_f64(s.true_peak_drift_mm),
                fmt_f64(s.est_peak_drift_mm),
                fmt_f64(s.drift_error),
                fmt_f64(s.true_peak_displacement_mm),
                fmt_f64(s.est_peak_displacement_mm),
                fmt_f64(s.displacement_error),
                fmt_f64(s.displacement_rms_error),
            ]
        })
        .collect();
    table_bytes(
        &[
            "story",
            "axis",
            "measured",
            "true_peak_drift_mm",
            "est_peak_drift_mm",
            "drift_error",
            "true_peak_displacement_mm",
            "est_peak_displacement_mm",
            "displacement_error",
            "displacement_rms_error",
        ],
        &rows,
    )
}

pub fn wall_errors_csv(c: &Comparison) -> Vec<u8> {
    let rows: Vec<Vec<String>> = c
        .walls
        .iter()
        .map(|w| {
            vec![
                w.wall_id.clone(),
                w.story.to_string(),
                fmt_f64(w.true_peak_drift_mm),
                fmt_f64(w.est_peak_drift_mm),
                fmt_f64(w.drift_error),
                fmt_f64(w.true_energy_kn_mm),
                fmt_f64(w.est_energy_kn_mm),
                fmt_f64(w.energy_error),
            ]
        })
        .collect();
    table_bytes(
        &[
            "wall_id",
            "story",
            "true_peak_drift_mm",
            "est_peak_drift_mm",
            "drift_error",
            "true_energy_kn_mm",
            "est_energy_kn_mm",
            "energy_error",
        ],
        &rows,
    )
}

/// Drift and force of every wall, truth next to estimate, for loop
/// overlays.
pub fn hysteresis_overlay_csv(model: &BuildingModel, truth: &ResponseHistory, est: &ResponseHistory) -> Vec<u8> {
    let mut header = vec!["time_s".to_string()];
    for w in &model.walls {
        for col in ["true_drift_mm", "true_force_kn", "est_drift_mm", "est_force_kn"] {
            header.push(format!("{}_{col}", w.id));
        }
    }
    let steps = truth.steps().min(est.steps());
    let rows: Vec<Vec<String>> = (0..steps)
        .map(|k| {
            let mut r = vec![fmt_f64(truth.time[k])];
            for w in 0..model.walls.len() {
                r.extend(
                    [truth.wall_drifts[(w, k)], truth.wall_forces[(w, k)], est.wall_drifts[(w, k)], est.wall_forces[(w, k)]]
                        .map(fmt_f64),
                );
            }
            r
        })
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    table_bytes(&header, &rows)
}

/// Flat wall table in report order.
pub fn damage_csv(r: &DamageReport) -> Vec<u8> {
    let rows: Vec<Vec<String>> = r
        .walls
        .iter()
        .map(|w| {
            vec![
                w.wall_id.clone(),
                w.story.to_string(),
                fmt_f64(w.delta_m),
                fmt_f64(w.e_hyst_total),
                fmt_f64(w.psi),
                fmt_f64(w.di),
                w.collapse_range.to_string(),
            ]
        })
        .collect();
    table_bytes(&["wall_id", "story", "delta_m_mm", "e_hyst_total_kn_mm", "psi", "di", "collapse_range"], &rows)
}

/// Bar-chart data: one bar per wall, grouped by story, in model order.
pub fn damage_bars_csv(r: &DamageReport, model: &BuildingModel) -> Vec<u8> {
    let rows: Vec<Vec<String>> = bar_order(r, model)
        .into_iter()
        .enumerate()
        .map(|(i, (id, story, di))| vec![i.to_string(), story.to_string(), id, fmt_f64(di)])
        .collect();
    table_bytes(&["bar", "story", "wall_id", "di"], &rows)
}

fn bar_order(r: &DamageReport, model: &BuildingModel) -> Vec<(String, usize, f64)> {
    let mut bars: Vec<(String, usize, f64)> = model
        .walls
        .iter()
        .filter_map(|w| r.walls.iter().find(|x| x.wall_id == w.id).map(|x| (x.wall_id.clone(), x.story, x.di)))
        .collect();
    bars.sort_by_key(|b| b.1);
    bars
}

fn svg_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Bar chart of wall damage indices with the DI = 1 line.
pub fn damage_svg(r: &DamageReport, model: &BuildingModel) -> String {
    let bars = bar_order(r, model);
    let (w, h, left, bottom, top) = (900.0, 420.0, 60.0, 60.0, 30.0);
    let plot_w = w - left - 20.0;
    let plot_h = h - bottom - top;
    let ymax = bars.iter().map(|b| b.2).fold(1.0f64, f64::max) * 1.1;
    let bw = plot_w / bars.len().max(1) as f64;
    let y = |v: f64| top + plot_h * (1.0 - v / ymax);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{left}" y="18" font-size="13">Wall damage index</text>"#);
    let _ = writeln!(s, r#"<line x1="{left}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, top + plot_h, left + plot_w, top + plot_h);
    let _ = writeln!(s, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#, top + plot_h);
    for t in 0..=4 {
        let v = ymax * t as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.2}</text>"#, left - 6.0, y(v) + 4.0);
    }
    for (i, (id, story, di)) in bars.iter().enumerate() {
        let x = left + i as f64 * bw;
        let fill = if *di > 1.0 { "#c0392b" } else if story % 2 == 0 { "#2e86c1" } else { "#5dade2" };
        let _ = writeln!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}"><title>{} DI {di:.3}</title></rect>"#,
            x + 0.1 * bw,
            y(*di),
            0.8 * bw,
            top + plot_h - y(*di),
            svg_escape(id)
        );
    }
    let mut start = 0;
    while start < bars.len() {
        let story = bars[start].1;
        let end = bars[start..].iter().position(|b| b.1 != story).map_or(bars.len(), |p| start + p);
        let cx = left + (start + end) as f64 * 0.5 * bw;
        let _ = writeln!(s, r#"<text x="{cx:.1}" y="{}" text-anchor="middle">story {story}</text>"#, top + plot_h + 18.0);
        start = end;
    }
    let _ = writeln!(s, r##"<line x1="{left}" y1="{:.2}" x2="{}" y2="{:.2}" stroke="#c0392b" stroke-dasharray="6 4"/>"##, y(1.0), left + plot_w, y(1.0));
    s.push_str("</svg>\n");
    s
}

/// Peak inter-story drift per story, truth and estimate, per axis.
pub fn drift_profile_svg(c: &Comparison) -> String {
    let (w, h) = (640.0, 420.0);
    let n = c.stories.iter().map(|s| s.story).max().unwrap_or(1);
    let xmax = c
        .stories
        .iter()
        .flat_map(|s| [s.true_peak_drift_mm, s.est_peak_drift_mm])
        .fold(1e-9f64, f64::max)
        * 1.1;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    for (panel, axis) in ["x", "y"].iter().enumerate() {
        let x0 = 60.0 + panel as f64 * 300.0;
        let (pw, ph, top) = (240.0, 330.0, 40.0);
        let px = |v: f64| x0 + pw * v / xmax;
        let py = |story: f64| top + ph * (1.0 - (story - 0.5) / n as f64);
        let _ = writeln!(s, r#"<text x="{x0}" y="24" font-size="13">Peak drift, {axis} (mm)</text>"#);
        let _ = writeln!(s, r#"<line x1="{x0}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, top + ph, x0 + pw, top + ph);
        let _ = writeln!(s, r#"<line x1="{x0}" y1="{top}" x2="{x0}" y2="{}" stroke="black"/>"#, top + ph);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{xmax:.1}</text>"#, x0 + pw, top + ph + 16.0);
        let rows: Vec<&StoryError> = c.stories.iter().filter(|e| e.axis == *axis).collect();
        for (key, color) in [(0, "black"), (1, "#c0392b")] {
            let pts: Vec<String> = rows
                .iter()
                .map(|e| {
                    let v = if key == 0 { e.true_peak_drift_mm } else { e.est_peak_drift_mm };
                    format!("{:.2},{:.2}", px(v), py(e.story as f64))
                })
                .collect();
            let dash = if key == 0 { "" } else { r#" stroke-dasharray="5 3""# };
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}"{dash}/>"#, pts.join(" "));
        }
        for e in &rows {
            let mark = if e.measured { "#27ae60" } else { "#7f8c8d" };
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{mark}"/>"#, px(e.true_peak_drift_mm), py(e.story as f64));
            let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, x0 - 6.0, py(e.story as f64) + 4.0, e.story);
        }
    }
    let _ = writeln!(s, r#"<text x="60" y="{}">solid: truth, dashed: estimate, green: instrumented story</text>"#, h - 12.0);
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_edges() {
        assert_eq!(relative_error(1.1, 1.0), 0.10000000000000009);
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!(relative_error(1.0, 0.0).is_infinite());
        assert_eq!(relative_error(-2.0, -1.0), 1.0);
    }
}
