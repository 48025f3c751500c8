//! On-disk formats.
//!
//! Record CSV: first header line holds column names, the second their
//! units; the first column is time in seconds. A `<file>.meta.json`
//! sidecar carries the exact sampling and free-form metadata.
//!
//! History CSV: same two-line header. Columns are `time`, then
//! `q_`, `dq_`, `ddq_` per DoF (`s<story>_<x|y|rz>`), then `drift_`,
//! `force_`, `energy_` per wall id, then the four energy-ledger terms.
//!
//! History binary (`.bin`), little-endian:
//! `b"EMBOHIST"`, u32 version (1), u32 n_dof, u32 n_walls, u64 steps,
//! u64 bisections, n_walls x (u32 byte length + UTF-8 wall id), then f64
//! blocks: time, q, dq, ddq (row by row, DoF-major), wall drifts, forces,
//! energies (wall-major), and the input, kinetic, viscous and wall energy
//! ledgers.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use embo_core::dynamics::{EnergyBalance, ResponseHistory};
use embo_core::signal::{Channel, Record, Unit};
use embo_core::structure::Axis;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::RunError;

pub const HISTORY_MAGIC: &[u8; 8] = b"EMBOHIST";
pub const HISTORY_VERSION: u32 = 1;
pub const RECORD_FORMAT_VERSION: u32 = 1;

/// Shortest representation that parses back to the same bits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| RunError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| RunError::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, RunError> {
    fs::read(path).map_err(|e| RunError::io(path, e))
}

pub fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("report types serialize");
    v.push(b'\n');
    v
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, RunError> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|e| RunError::format(path, e.to_string()))
}

fn csv_bytes(header: &[String], units: &[String], rows: impl Iterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    w.write_record(units).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Names, units and numeric columns.
type Table = (Vec<String>, Vec<String>, Vec<Vec<f64>>);

/// Parses a two-line-header CSV.
fn read_table(path: &Path) -> Result<Table, RunError> {
    let bytes = read_file(path)?;
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(bytes.as_slice());
    let mut rows = r.records();
    let mut next_line = |what: &str| -> Result<Vec<String>, RunError> {
        match rows.next() {
            Some(Ok(rec)) => Ok(rec.iter().map(|s| s.trim().to_string()).collect()),
            Some(Err(e)) => Err(RunError::format(path, e.to_string())),
            None => Err(RunError::format(path, format!("missing {what} header line"))),
        }
    };
    let names = next_line("name")?;
    let units = next_line("unit")?;
    if units.len() != names.len() {
        return Err(RunError::format(path, "name and unit header lines differ in length"));
    }
    let mut cols = vec![Vec::new(); names.len()];
    for (line, rec) in rows.enumerate() {
        let rec = rec.map_err(|e| RunError::format(path, e.to_string()))?;
        if rec.len() != names.len() {
            return Err(RunError::format(
                path,
                format!("data row {} has {} fields, expected {}", line + 1, rec.len(), names.len()),
            ));
        }
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                RunError::format(path, format!("data row {}, column `{}`: not a number: {field:?}", line + 1, names[c]))
            })?;
            cols[c].push(v);
        }
    }
    Ok((names, units, cols))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordSidecar {
    pub format: String,
    pub version: u32,
    pub t0_s: f64,
    pub dt_s: f64,
    pub samples: usize,
    pub meta: BTreeMap<String, String>,
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn record_csv_bytes(rec: &Record) -> Vec<u8> {
    let mut header = vec!["time".to_string()];
    let mut units = vec!["s".to_string()];
    for c in &rec.channels {
        header.push(c.name.clone());
        units.push(c.unit.label().to_string());
    }
    let rows = (0..rec.len()).map(|k| {
        let mut row = vec![fmt_f64(rec.t0 + k as f64 * rec.dt)];
        row.extend(rec.channels.iter().map(|c| fmt_f64(c.samples[k])));
        row
    });
    csv_bytes(&header, &units, rows)
}

pub fn record_sidecar(rec: &Record) -> RecordSidecar {
    RecordSidecar {
        format: "embo-record".into(),
        version: RECORD_FORMAT_VERSION,
        t0_s: rec.t0,
        dt_s: rec.dt,
        samples: rec.len(),
        meta: rec.meta.clone(),
    }
}

/// Writes the CSV and its sidecar; returns both paths.
pub fn write_record(path: &Path, rec: &Record) -> Result<[PathBuf; 2], RunError> {
    write_file(path, &record_csv_bytes(rec))?;
    let side = sidecar_path(path);
    write_file(&side, &to_json(&record_sidecar(rec)))?;
    Ok([path.to_path_buf(), side])
}

/// Reads a record CSV. The sidecar is optional; without it the sampling
/// interval comes from the time column.
pub fn read_record(path: &Path) -> Result<Record, RunError> {
    let (names, units, mut cols) = read_table(path)?;
    if names.first().map(String::as_str) != Some("time") || units[0] != "s" {
        return Err(RunError::format(path, "first column must be `time` in `s`"));
    }
    let time = cols.remove(0);
    if time.len() < 2 {
        return Err(RunError::format(path, "a record needs at least two samples"));
    }
    let side = sidecar_path(path);
    let (t0, dt, meta) = if side.exists() {
        let s: RecordSidecar = read_json(&side)?;
        if s.samples != time.len() {
            return Err(RunError::format(&side, format!("declares {} samples, CSV has {}", s.samples, time.len())));
        }
        (s.t0_s, s.dt_s, s.meta)
    } else {
        let n = time.len();
        (time[0], (time[n - 1] - time[0]) / (n - 1) as f64, BTreeMap::new())
    };
    if !(dt.is_finite() && dt > 0.0) {
        return Err(RunError::format(path, "time column must increase"));
    }
    for (k, t) in time.iter().enumerate() {
        if (t - (t0 + k as f64 * dt)).abs() > 1e-6 * dt.max(t.abs() * 1e-3) + 1e-9 {
            return Err(RunError::format(path, format!("non-uniform sampling at row {}", k + 1)));
        }
    }
    let mut channels = Vec::new();
    for (i, samples) in cols.into_iter().enumerate() {
        let unit = Unit::parse(&units[i + 1]).ok_or_else(|| {
            RunError::format(path, format!("column `{}`: unknown unit `{}`", names[i + 1], units[i + 1]))
        })?;
        channels.push(Channel {
            name: names[i + 1].clone(),
            unit,
            samples,
        });
    }
    let mut rec = Record::new(t0, dt, channels).map_err(|e| RunError::format(path, e.to_string()))?;
    rec.meta = meta;
    Ok(rec)
}

/// A history together with the wall ids its rows belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredHistory {
    pub history: ResponseHistory,
    pub wall_ids: Vec<String>,
}

pub fn dof_name(dof: usize) -> String {
    let axis = [Axis::X, Axis::Y, Axis::Rotation][dof % 3];
    format!("s{}_{}", dof / 3 + 1, axis.label())
}

fn dof_units(dof: usize) -> [&'static str; 3] {
    if dof % 3 == 2 {
        ["rad", "rad/s", "rad/s^2"]
    } else {
        ["m", "m/s", "m/s^2"]
    }
}

pub fn history_csv_bytes(h: &ResponseHistory, wall_ids: &[String]) -> Vec<u8> {
    let n = h.n_dof();
    let mut header = vec!["time".to_string()];
    let mut units = vec!["s".to_string()];
    for (k, prefix) in ["q", "dq", "ddq"].iter().enumerate() {
        for d in 0..n {
            header.push(format!("{prefix}_{}", dof_name(d)));
            units.push(dof_units(d)[k].to_string());
        }
    }
    for (prefix, unit) in [("drift", "mm"), ("force", "kN"), ("energy", "kN*mm")] {
        for id in wall_ids {
            header.push(format!("{prefix}_{id}"));
            units.push(unit.to_string());
        }
    }
    for name in ["input", "kinetic", "viscous", "wall"] {
        header.push(format!("ledger_{name}"));
        units.push("kN*m".to_string());
    }
    let e = &h.energy;
    let rows = (0..h.steps()).map(|k| {
        let mut row = Vec::with_capacity(header.len());
        row.push(fmt_f64(h.time[k]));
        for m in [&h.q, &h.dq, &h.ddq, &h.wall_drifts, &h.wall_forces, &h.wall_energies] {
            row.extend((0..m.nrows()).map(|r| fmt_f64(m[(r, k)])));
        }
        row.extend([e.input[k], e.kinetic[k], e.viscous[k], e.wall[k]].map(fmt_f64));
        row
    });
    csv_bytes(&header, &units, rows)
}

pub fn read_history_csv(path: &Path) -> Result<StoredHistory, RunError> {
    let (names, _units, cols) = read_table(path)?;
    let count = |p: &str| names.iter().filter(|c| c.starts_with(p)).count();
    let n = count("q_");
    let w = count("drift_");
    if names.len() != 1 + 3 * n + 3 * w + 4 || names[0] != "time" {
        return Err(RunError::format(path, "column layout does not match the history format"));
    }
    let steps = cols[0].len();
    let block = |start: usize, rows: usize| DMatrix::from_fn(rows, steps, |r, k| cols[start + r][k]);
    let wall_ids = names[1 + 3 * n..1 + 3 * n + w]
        .iter()
        .map(|c| c.trim_start_matches("drift_").to_string())
        .collect();
    let base = 1 + 3 * n + 3 * w;
    let history = ResponseHistory {
        time: cols[0].clone(),
        q: block(1, n),
        dq: block(1 + n, n),
        ddq: block(1 + 2 * n, n),
        wall_drifts: block(1 + 3 * n, w),
        wall_forces: block(1 + 3 * n + w, w),
        wall_energies: block(1 + 3 * n + 2 * w, w),
        energy: EnergyBalance {
            input: cols[base].clone(),
            kinetic: cols[base + 1].clone(),
            viscous: cols[base + 2].clone(),
            wall: cols[base + 3].clone(),
        },
        bisections: 0,
    };
    Ok(StoredHistory { history, wall_ids })
}

pub fn history_binary_bytes(h: &ResponseHistory, wall_ids: &[String]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(HISTORY_MAGIC);
    out.extend_from_slice(&HISTORY_VERSION.to_le_bytes());
    out.extend_from_slice(&(h.n_dof() as u32).to_le_bytes());
    out.extend_from_slice(&(h.n_walls() as u32).to_le_bytes());
    out.extend_from_slice(&(h.steps() as u64).to_le_bytes());
    out.extend_from_slice(&(h.bisections as u64).to_le_bytes());
    for id in wall_ids {
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
    }
    let mut put = |xs: &mut dyn Iterator<Item = f64>| {
        for x in xs {
            out.extend_from_slice(&x.to_le_bytes());
        }
    };
    put(&mut h.time.iter().copied());
    for m in [&h.q, &h.dq, &h.ddq, &h.wall_drifts, &h.wall_forces, &h.wall_energies] {
        // nalgebra stores column-major; the file is row-major
        put(&mut m.transpose().iter().copied());
    }
    let e = &h.energy;
    for v in [&e.input, &e.kinetic, &e.viscous, &e.wall] {
        put(&mut v.iter().copied());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], RunError> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.at..end];
                self.at = end;
                Ok(s)
            }
            None => Err(RunError::format(self.path, "truncated history file")),
        }
    }
    fn u32(&mut self) -> Result<u32, RunError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, RunError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, RunError> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| RunError::format(self.path, "size overflow"))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>, RunError> {
        Ok(DMatrix::from_row_slice(rows, cols, &self.f64s(rows * cols)?))
    }
}

pub fn read_history_binary(path: &Path) -> Result<StoredHistory, RunError> {
    let bytes = read_file(path)?;
    parse_history_binary(&bytes, path)
}

pub fn parse_history_binary(bytes: &[u8], path: &Path) -> Result<StoredHistory, RunError> {
    let mut c = Cursor { bytes, at: 0, path };
    if c.take(8)? != HISTORY_MAGIC {
        return Err(RunError::format(path, "not an EMBOHIST file"));
    }
    let version = c.u32()?;
    if version != HISTORY_VERSION {
        return Err(RunError::format(path, format!("unsupported history version {version}")));
    }
    let n = c.u32()? as usize;
    let w = c.u32()? as usize;
    let steps = c.u64()? as usize;
    let bisections = c.u64()? as usize;
    let mut wall_ids = Vec::with_capacity(w);
    for _ in 0..w {
        let len = c.u32()? as usize;
        let id = std::str::from_utf8(c.take(len)?).map_err(|_| RunError::format(path, "wall id is not UTF-8"))?;
        wall_ids.push(id.to_string());
    }
    let time = c.f64s(steps)?;
    let q = c.matrix(n, steps)?;
    let dq = c.matrix(n, steps)?;
    let ddq = c.matrix(n, steps)?;
    let wall_drifts = c.matrix(w, steps)?;
    let wall_forces = c.matrix(w, steps)?;
    let wall_energies = c.matrix(w, steps)?;
    let energy = EnergyBalance {
        input: c.f64s(steps)?,
        kinetic: c.f64s(steps)?,
        viscous: c.f64s(steps)?,
        wall: c.f64s(steps)?,
    };
    if c.at != bytes.len() {
        return Err(RunError::format(path, "trailing bytes after history data"));
    }
    Ok(StoredHistory {
        history: ResponseHistory {
            time,
            q,
            dq,
            ddq,
            wall_drifts,
            wall_forces,
            wall_energies,
            energy,
            bisections,
        },
        wall_ids,
    })
}

/// Reads `stem.bin` if present, otherwise `stem.csv`.
pub fn read_history(stem: &Path) -> Result<StoredHistory, RunError> {
    let bin = stem.with_extension("bin");
    if bin.exists() {
        return read_history_binary(&bin);
    }
    read_history_csv(&stem.with_extension("csv"))
}

/// Plain CSV table with a single header line.
pub fn table_bytes(header: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn append_line(path: &Path, line: &str) -> Result<(), RunError> {
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| RunError::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| RunError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_history() -> (ResponseHistory, Vec<String>) {
        let steps = 5;
        let m = |rows: usize, s: f64| DMatrix::from_fn(rows, steps, |r, k| s * (r as f64 + 1.0) * (k as f64 * 0.37).sin() + 1e-17);
        let h = ResponseHistory {
            time: (0..steps).map(|k| k as f64 * 0.01).collect(),
            q: m(6, 0.1),
            dq: m(6, 0.3),
            ddq: m(6, -2.0),
            wall_drifts: m(2, 3.0),
            wall_forces: m(2, 7.0),
            wall_energies: m(2, 11.0),
            energy: EnergyBalance {
                input: vec![0.0, 1.0, 2.0, 3.0, 1.0 / 3.0],
                kinetic: vec![0.5; steps],
                viscous: vec![0.25; steps],
                wall: vec![f64::MIN_POSITIVE; steps],
            },
            bisections: 3,
        };
        (h, vec!["S1W0".into(), "S2W1".into()])
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let (h, ids) = sample_history();
        let bytes = history_binary_bytes(&h, &ids);
        let back = parse_history_binary(&bytes, Path::new("x.bin")).unwrap();
        assert_eq!(back.history, h);
        assert_eq!(back.wall_ids, ids);
        assert!(parse_history_binary(&bytes[..bytes.len() - 1], Path::new("x.bin")).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(parse_history_binary(&bad, Path::new("x.bin")).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let (h, ids) = sample_history();
        let stem = dir.path().join("h");
        write_file(&stem.with_extension("csv"), &history_csv_bytes(&h, &ids)).unwrap();
        let back = read_history(&stem).unwrap();
        let mut expect = h.clone();
        expect.bisections = 0;
        assert_eq!(back.history, expect);
        assert_eq!(back.wall_ids, ids);
    }

    #[test]
    fn record_round_trip_with_and_without_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = Record::new(
            0.5,
            0.02,
            vec![
                Channel { name: "a".into(), unit: Unit::Acceleration, samples: vec![0.1, -0.2, 1e-9, 3.0] },
                Channel { name: "r".into(), unit: Unit::AngularAcceleration, samples: vec![0.0, 1.0, 2.0, 3.0] },
            ],
        )
        .unwrap();
        rec.meta.insert("source".into(), "test".into());
        let p = dir.path().join("rec.csv");
        write_record(&p, &rec).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("time,a,r\ns,m/s^2,rad/s^2\n"), "{text}");
        assert_eq!(read_record(&p).unwrap(), rec);
        fs::remove_file(sidecar_path(&p)).unwrap();
        let back = read_record(&p).unwrap();
        assert_eq!(back.channels, rec.channels);
        assert!((back.dt - 0.02).abs() < 1e-12);
    }

    #[test]
    fn malformed_records_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        for text in [
            "time,a\n",
            "time,a\ns,furlong\n0,1\n0.1,2\n",
            "time,a\ns,m/s\n0,1\n0.1,x\n",
            "time,a\ns,m/s\n0,1\n0.1,2\n0.5,3\n",
            "t,a\ns,m/s\n0,1\n0.1,2\n",
        ] {
            fs::write(&p, text).unwrap();
            assert!(matches!(read_record(&p), Err(RunError::Format { .. })), "{text}");
        }
    }
}
