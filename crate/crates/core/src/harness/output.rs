//! CSV, manifest and heatmap emission.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::lattice::GridSpec;
use crate::pgm::heatmap;
use crate::source::RNG_DESCRIPTION;

use super::{ExperimentConfig, HarnessError};

/// Formats `v` with 9 significant digits, plain notation where readable.
pub fn sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let e = v.abs().log10().floor() as i32;
    if (-5..9).contains(&e) {
        let decimals = (8 - e).max(0) as usize;
        let s = format!("{v:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{v:.8e}")
    }
}

/// Comma-separated table with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push_numbers(&mut self, row: &[f64]) {
        self.rows.push(row.iter().map(|v| sig9(*v)).collect());
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<(), HarnessError> {
        fs::write(path, self.render())?;
        Ok(())
    }

    /// Parses the output of [`Table::render`].
    pub fn parse(text: &str) -> Option<Self> {
        let mut lines = text.lines();
        let header = lines.next()?.split(',').map(str::to_string).collect();
        let rows = lines
            .map(|l| l.split(',').map(str::to_string).collect())
            .collect();
        Some(Self { header, rows })
    }

    /// Column `name` parsed as numbers.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        self.rows.iter().map(|r| r.get(i)?.parse().ok()).collect()
    }
}

/// Profile table `(x2f_um[, y2f_um], columns...)` over a grid.
pub fn profile_table(grid: &GridSpec, columns: &[(&str, &[f64])]) -> Table {
    let mut header = vec!["x2f_um"];
    if !grid.is_1d() {
        header.push("y2f_um");
    }
    header.extend(columns.iter().map(|(n, _)| *n));
    let mut t = Table::new(&header);
    for iy in 0..grid.ny() {
        for ix in 0..grid.nx() {
            let i = grid.index(ix, iy);
            let mut row = vec![grid.x_at(ix)];
            if !grid.is_1d() {
                row.push(grid.y_at(iy));
            }
            row.extend(columns.iter().map(|(_, v)| v[i]));
            t.push_numbers(&row);
        }
    }
    t
}

/// Creates `dir`, refusing to reuse a non-empty directory unless
/// `overwrite` is set.
pub fn prepare_dir(dir: &Path, overwrite: bool) -> Result<PathBuf, HarnessError> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir)?.next().is_some();
        if non_empty && !overwrite {
            return Err(HarnessError::OutputExists(dir.display().to_string()));
        }
    } else {
        fs::create_dir_all(dir)?;
    }
    Ok(dir.to_path_buf())
}

/// Writes an 8-bit heatmap of `values` and returns the `(min, max)` used.
pub fn write_heatmap(
    path: &Path,
    grid: &GridSpec,
    values: &[f64],
) -> Result<(f64, f64), HarnessError> {
    let (map, lo, hi) = heatmap(values, grid.nx(), grid.ny());
    map.write(path)?;
    Ok((lo, hi))
}

/// Run manifest: the full config followed by `manifest.*` entries.
pub struct Manifest {
    text: String,
}

impl Manifest {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        let mut text = String::from("# ghostsim run manifest; re-run with --config <this file>\n");
        text.push_str(&config.to_text());
        let mut m = Self { text };
        m.add("manifest.command", command);
        m.add("manifest.version", env!("CARGO_PKG_VERSION"));
        m.add("manifest.rng", RNG_DESCRIPTION);
        m
    }

    pub fn add(&mut self, key: &str, value: impl std::fmt::Display) {
        let _ = writeln!(self.text, "{key} = {value}");
    }

    pub fn write(&self, path: &Path) -> Result<(), HarnessError> {
        fs::write(path, &self.text)?;
        Ok(())
    }
}
