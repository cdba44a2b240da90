//! Result files and their atomic commit.
//!
//! Field CSVs have the columns `x,u` in 1D and `x,y,u` in 2D, one row per
//! interior node in node order. Reals are written with 17 significant digits.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chance_core::Field;

use crate::error::HarnessError;

pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PlotKind {
    Field { dim: usize, per_axis: usize },
    Series { log_x: bool },
}

/// Files of one run, held in memory until [`Artifacts::commit`].
#[derive(Debug, Default)]
pub struct Artifacts {
    files: BTreeMap<String, Vec<u8>>,
    plots: BTreeMap<String, PlotKind>,
}

impl Artifacts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files.get(name).map(Vec::as_slice)
    }

    pub fn add_bytes(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.insert(name.to_string(), bytes);
    }

    pub fn add_json<S: serde::Serialize>(&mut self, name: &str, value: &S) -> Result<(), HarnessError> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| HarnessError::io(name, std::io::Error::other(e)))?;
        text.push('\n');
        self.add_bytes(name, text.into_bytes());
        Ok(())
    }

    pub fn add_field(&mut self, name: &str, field: &Field<f64>) {
        self.add_columns(name, &[("u", field)]);
    }

    /// Several fields on one grid, sharing the coordinate columns.
    pub fn add_columns(&mut self, name: &str, cols: &[(&str, &Field<f64>)]) {
        let grid = cols[0].1.grid().clone();
        let mut out = String::new();
        let coords = if grid.dim() == 1 { "x" } else { "x,y" };
        out.push_str(coords);
        for (head, _) in cols {
            out.push(',');
            out.push_str(head);
        }
        out.push('\n');
        for (j, p) in grid.points().enumerate() {
            let row: Vec<String> = p
                .iter()
                .map(|&c| num(c))
                .chain(cols.iter().map(|(_, f)| num(f.values()[j])))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        self.add_bytes(name, out.into_bytes());
        self.plots.insert(
            name.to_string(),
            PlotKind::Field {
                dim: grid.dim(),
                per_axis: grid.per_axis(),
            },
        );
    }

    /// A table whose cells are already formatted.
    pub fn add_table(&mut self, name: &str, header: &[&str], rows: &[Vec<String>], log_x: bool) {
        let mut out = header.join(",");
        out.push('\n');
        for r in rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        self.add_bytes(name, out.into_bytes());
        self.plots.insert(name.to_string(), PlotKind::Series { log_x });
    }

    /// Adds a gnuplot script next to every CSV.
    pub fn add_gnuplot_scripts(&mut self) {
        let plots: Vec<_> = self.plots.iter().map(|(n, k)| (n.clone(), *k)).collect();
        for (name, kind) in plots {
            let stem = name.trim_end_matches(".csv");
            let mut s = String::new();
            s.push_str("set datafile separator ','\n");
            s.push_str("set key autotitle columnhead\n");
            s.push_str("set terminal pngcairo size 900,600\n");
            s.push_str(&format!("set output '{stem}.png'\n"));
            match kind {
                PlotKind::Field { dim: 1, .. } => {
                    s.push_str("set xlabel 'x'\n");
                    s.push_str(&format!("plot for [i=2:*] '{name}' using 1:i with lines\n"));
                }
                PlotKind::Field { per_axis, .. } => {
                    s.push_str(&format!("set dgrid3d {per_axis},{per_axis}\n"));
                    s.push_str("set pm3d\nset xlabel 'x'\nset ylabel 'y'\n");
                    s.push_str(&format!("splot '{name}' using 1:2:3 with pm3d\n"));
                }
                PlotKind::Series { log_x } => {
                    if log_x {
                        s.push_str("set logscale x\n");
                    }
                    s.push_str(&format!("plot for [i=2:*] '{name}' using 1:i with linespoints\n"));
                }
            }
            self.add_bytes(&format!("{stem}.gp"), s.into_bytes());
        }
    }

    /// Writes every file into a staging directory and renames it onto `dir`.
    ///
    /// An existing `dir` is replaced only when it is empty or holds a
    /// previous run (a `summary.json`).
    pub fn commit(&self, dir: &Path) -> Result<(), HarnessError> {
        if dir.exists() {
            let empty = fs::read_dir(dir)
                .map_err(|e| HarnessError::io(dir, e))?
                .next()
                .is_none();
            if !empty && !dir.join("summary.json").is_file() {
                return Err(HarnessError::io(
                    dir,
                    std::io::Error::new(
                        std::io::ErrorKind::AlreadyExists,
                        "output directory is not empty and holds no previous run",
                    ),
                ));
            }
        }
        let parent = match dir.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).map_err(|e| HarnessError::io(&parent, e))?;
        let base = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".into());
        let staging = parent.join(format!(".{base}.staging-{}", std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| HarnessError::io(&staging, e))?;
        }
        let result = self.write_all(&staging).and_then(|_| {
            if dir.exists() {
                fs::remove_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
            }
            fs::rename(&staging, dir).map_err(|e| HarnessError::io(dir, e))
        });
        if result.is_err() {
            let _ = fs::remove_dir_all(&staging);
        }
        result
    }

    fn write_all(&self, staging: &Path) -> Result<(), HarnessError> {
        fs::create_dir(staging).map_err(|e| HarnessError::io(staging, e))?;
        for (name, bytes) in &self.files {
            let path = staging.join(name);
            fs::write(&path, bytes).map_err(|e| HarnessError::io(&path, e))?;
        }
        Ok(())
    }
}
