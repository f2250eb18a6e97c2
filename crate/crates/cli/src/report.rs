use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

pub const REPORT_SCHEMA: &str = "finsler-lab/report/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// Passes when `value <= tolerance`.
    AtMost,
    /// Passes when `value >= tolerance`.
    AtLeast,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub relation: Relation,
    pub pass: bool,
}

impl Check {
    pub fn new(name: &str, value: f64, relation: Relation, tolerance: f64) -> Self {
        let pass = value.is_finite()
            && match relation {
                Relation::AtMost => value <= tolerance,
                Relation::AtLeast => value >= tolerance,
            };
        Self {
            name: name.to_string(),
            value,
            tolerance,
            relation,
            pass,
        }
    }
}

/// A plotted series: snake_case header and rows of numbers.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub file: String,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<f64>>,
}

impl Series {
    pub fn new(file: &str, columns: &[&'static str]) -> Self {
        Self {
            file: file.to_string(),
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// CSV text with 17 significant digits per value.
    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Serialize)]
pub struct Timing {
    pub finished_unix_s: u64,
    pub wall_time_s: f64,
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub schema: &'static str,
    pub config: serde_json::Value,
    pub checks: Vec<Check>,
    pub pass: bool,
    pub artifacts: Vec<String>,
    /// Everything that varies between identical runs lives under this key.
    pub timing: Timing,
}

/// Write through a temporary file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let name = path.file_name().context("artifact path has no file name")?;
    let tmp: PathBuf = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}
