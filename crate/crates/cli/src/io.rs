//! Headerless-CSV matrix/vector I/O and reproducibility manifests.
//!
//! Matrices are rows-as-observations, comma separated, no header. Vectors
//! are single-column files. Lines starting with `#` are manifest comments
//! and are skipped on read, so our own outputs round-trip.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use slope_core::{Matrix, Tolerances, Vector};

#[derive(Debug)]
pub struct IoError(pub String);

impl std::fmt::Display for IoError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub type IoResult<T> = Result<T, IoError>;

fn data_lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
}

pub fn read_matrix(path: &Path) -> IoResult<Matrix> {
    let text = fs::read_to_string(path)
        .map_err(|e| IoError(format!("cannot read {}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in data_lines(&text).enumerate() {
        let row: Result<Vec<f64>, _> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect();
        let row = row.map_err(|e| {
            IoError(format!(
                "{}: bad number on data line {}: {e}",
                path.display(),
                lineno + 1
            ))
        })?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(IoError(format!(
                    "{}: ragged row on data line {} ({} fields, expected {})",
                    path.display(),
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(IoError(format!("{}: no data rows", path.display())));
    }
    let ncols = rows[0].len();
    Ok(Matrix::from_row_iterator(
        rows.len(),
        ncols,
        rows.into_iter().flatten(),
    ))
}

pub fn read_vector(path: &Path) -> IoResult<Vector> {
    let m = read_matrix(path)?;
    if m.ncols() != 1 {
        return Err(IoError(format!(
            "{}: expected a single-column vector, found {} columns",
            path.display(),
            m.ncols()
        )));
    }
    Ok(m.column(0).clone_owned())
}

/// 17-significant-digit decimal rendering, stable across runs.
pub fn fmt_full(x: f64) -> String {
    format!("{x:.16e}")
}

/// Reproducibility header written at the top of every output file.
pub struct Manifest {
    pub command: String,
    pub details: Vec<(String, String)>,
    pub tol: Tolerances,
}

impl Manifest {
    pub fn new(command: &str, tol: &Tolerances) -> Self {
        Manifest {
            command: command.to_string(),
            details: Vec::new(),
            tol: tol.clone(),
        }
    }

    pub fn with(mut self, key: &str, value: impl std::fmt::Display) -> Self {
        self.details.push((key.to_string(), value.to_string()));
        self
    }

    pub fn header(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# slope {} command={}", env!("CARGO_PKG_VERSION"), self.command);
        for (k, v) in &self.details {
            let _ = writeln!(out, "# {k}={v}");
        }
        let _ = writeln!(
            out,
            "# tolerances eq_tol={:e} rank_tol={:e} pattern_tol={:e} membership_tol={:e}",
            self.tol.eq_tol, self.tol.rank_tol, self.tol.pattern_tol, self.tol.membership_tol
        );
        out
    }
}

pub fn write_with_manifest(path: &Path, manifest: &Manifest, body: &str) -> IoResult<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)
                .map_err(|e| IoError(format!("cannot create {}: {e}", dir.display())))?;
        }
    }
    let mut text = manifest.header();
    text.push_str(body);
    fs::write(path, text).map_err(|e| IoError(format!("cannot write {}: {e}", path.display())))
}
