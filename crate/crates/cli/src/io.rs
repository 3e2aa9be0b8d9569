//! Artifact formats. Grids are row-major CSV, one grid row per line, with a
//! `<name>.meta.json` sidecar and an optional PGM render.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub units: String,
    pub provenance: String,
    pub min: f64,
    pub max: f64,
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Write `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn grid_csv(rows: usize, cols: usize, values: &[f64]) -> String {
    assert_eq!(values.len(), rows * cols);
    let mut s = String::with_capacity(values.len() * 12);
    for row in values.chunks(cols) {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                s.push(',');
            }
            s.push_str(&v.to_string());
        }
        s.push('\n');
    }
    s
}

/// 8-bit binary PGM with linear min-max scaling.
pub fn grid_pgm(rows: usize, cols: usize, values: &[f64]) -> Vec<u8> {
    let (lo, hi) = min_max(values);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(values.iter().map(|v| (255.0 * (v - lo) / span).round().clamp(0.0, 255.0) as u8));
    out
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
}

/// Write `<dir>/<name>.csv`, `<name>.meta.json` and optionally `<name>.pgm`.
pub fn write_grid(
    dir: &Path,
    name: &str,
    rows: usize,
    cols: usize,
    values: &[f64],
    units: &str,
    provenance: &str,
    pgm: bool,
) -> CliResult<PathBuf> {
    let path = dir.join(format!("{name}.csv"));
    write_atomic(&path, grid_csv(rows, cols, values).as_bytes())?;
    let (min, max) = min_max(values);
    let meta = GridMeta {
        name: name.to_string(),
        rows,
        cols,
        units: units.to_string(),
        provenance: provenance.to_string(),
        min,
        max,
    };
    let meta_json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    write_atomic(&dir.join(format!("{name}.meta.json")), meta_json.as_bytes())?;
    if pgm {
        write_atomic(&dir.join(format!("{name}.pgm")), &grid_pgm(rows, cols, values))?;
    }
    Ok(path)
}

/// Read a grid CSV back as `(rows, cols, values)`.
pub fn read_grid(path: &Path) -> CliResult<(usize, usize, Vec<f64>)> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Config(format!("{}: line {}: {e}", path.display(), i + 1)))?;
        match cols {
            None => cols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(CliError::Config(format!(
                    "{}: line {} has {} columns, expected {c}",
                    path.display(),
                    i + 1,
                    row.len()
                )))
            }
            _ => {}
        }
        values.extend(row);
        rows += 1;
    }
    Ok((rows, cols.unwrap_or(0), values))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    write_atomic(path, text.as_bytes())
}

/// Serialize `rows` as CSV with a header row.
pub fn write_table<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| CliError::io(path, std::io::Error::other(e.to_string())))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::io(path, std::io::Error::other(e.to_string())))?;
    write_atomic(path, &bytes)
}

pub fn read_table<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::io(path, std::io::Error::other(e.to_string())))?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Write a stream of lines produced by `f` atomically.
pub fn write_with<F>(path: &Path, f: F) -> CliResult<()>
where
    F: FnOnce(&mut Vec<u8>) -> lsinv::Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf)?;
    buf.flush().ok();
    write_atomic(path, &buf)
}
