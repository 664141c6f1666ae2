use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::failure::{CliResult, Failure};

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| Failure::runtime(anyhow!("cannot create output directory {}: {e}", dir.display())))
}

/// Creates `path` and hands a buffered writer to `body`; any failure there
/// counts as a runtime (output-side) error.
pub fn write_file<F>(path: &Path, body: F) -> CliResult<()>
where
    F: FnOnce(&mut BufWriter<File>) -> phonocycle::Result<()>,
{
    let f = File::create(path).map_err(|e| Failure::runtime(anyhow!("cannot create {}: {e}", path.display())))?;
    let mut w = BufWriter::new(f);
    body(&mut w).map_err(|e| Failure::runtime(anyhow!("writing {}: {e}", path.display())))?;
    w.flush().map_err(|e| Failure::runtime(anyhow!("writing {}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    write_file(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w).map_err(|e| phonocycle::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

/// Reads a JSON config and checks its `schema` tag.
pub fn read_config<T: DeserializeOwned>(path: &Path, expected: &str) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| Failure::config(anyhow!("cannot read {}: {e}", path.display())))?;
    let raw: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Failure::config(anyhow!("{}: invalid JSON: {e}", path.display())))?;
    match raw.get("schema").and_then(|s| s.as_str()) {
        Some(s) if s == expected => {}
        Some(s) => return Err(Failure::config(anyhow!("{}: schema '{s}', expected '{expected}'", path.display()))),
        None => return Err(Failure::config(anyhow!("{}: missing \"schema\": \"{expected}\"", path.display()))),
    }
    serde_json::from_value(raw).map_err(|e| Failure::config(anyhow!("{}: {e}", path.display())))
}

/// Resolves `p` against the directory holding the config file.
pub fn relative_to(config: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        return p.to_path_buf();
    }
    match config.parent() {
        Some(dir) => dir.join(p),
        None => p.to_path_buf(),
    }
}

/// A parsed `--wavelengths`/`--temperatures` value.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid(pub Vec<f64>);

pub fn grid_arg(s: &str) -> Result<Grid, String> {
    parse_grid(s).map(Grid)
}

/// `lo:hi:step` (inclusive) or a comma-separated list.
pub fn parse_grid(s: &str) -> Result<Vec<f64>, String> {
    let s = s.trim();
    if s.is_empty() {
        return Err("empty grid".into());
    }
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| format!("'{t}' is not a number"));
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("range '{s}' must have the form lo:hi:step"));
        }
        let (lo, hi, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step.is_finite() && step > 0.0) || !(lo.is_finite() && hi.is_finite()) || hi < lo {
            return Err(format!("range '{s}' needs finite lo <= hi and step > 0"));
        }
        let n = ((hi - lo) / step + 1e-9).floor() as usize;
        if n > 1_000_000 {
            return Err(format!("range '{s}' has more than a million points"));
        }
        Ok((0..=n).map(|i| round_grid(lo + i as f64 * step)).collect())
    } else {
        s.split(',').map(num).collect()
    }
}

/// Trims accumulated binary noise (`580.1000000003`) from grid points.
fn round_grid(v: f64) -> f64 {
    let r = (v * 1e9).round() / 1e9;
    if (r - v).abs() <= 1e-12 * v.abs().max(1.0) {
        r
    } else {
        v
    }
}
