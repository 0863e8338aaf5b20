//! Tables, figures, checks and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::HarnessError;
use crate::svg::Plot;

/// A CSV table; the first row written is `header`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub file: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(file: &str, header: &[&str]) -> Self {
        Self {
            file: file.into(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<Vec<u8>, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| HarnessError::io("csv buffer", e.into_error()))
    }
}

/// One pass/fail threshold evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    /// `value ≤ limit` when a limit is configured.
    pub fn at_most(name: &str, value: f64, limit: Option<f64>) -> Option<Self> {
        limit.map(|lim| Self::new(name, value <= lim, format!("{value:e} <= {lim:e}")))
    }

    /// `value ≥ limit` when a limit is configured.
    pub fn at_least(name: &str, value: f64, limit: Option<f64>) -> Option<Self> {
        limit.map(|lim| Self::new(name, value >= lim, format!("{value:e} >= {lim:e}")))
    }
}

#[derive(Debug, Clone)]
pub struct Report {
    pub command: String,
    pub tables: Vec<Table>,
    pub figures: Vec<(String, Plot)>,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
}

impl Report {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.into(),
            tables: Vec::new(),
            figures: Vec::new(),
            checks: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn table(&self, file: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.file == file)
    }

    /// Writes every table, figure and `manifest.json` into `dir`.
    pub fn write(&self, dir: &Path, manifest: &Manifest) -> Result<Vec<PathBuf>, HarnessError> {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let mut written = Vec::new();
        let mut put = |name: &str, bytes: &[u8]| -> Result<(), HarnessError> {
            let path = dir.join(name);
            fs::write(&path, bytes).map_err(|e| HarnessError::io(&path, e))?;
            written.push(path);
            Ok(())
        };
        for t in &self.tables {
            put(&t.file, &t.to_csv()?)?;
        }
        for (name, plot) in &self.figures {
            put(name, plot.render().as_bytes())?;
        }
        let mut m = manifest.clone();
        m.outputs = self
            .tables
            .iter()
            .map(|t| t.file.clone())
            .chain(self.figures.iter().map(|f| f.0.clone()))
            .collect();
        m.checks = self.checks.clone();
        m.warnings = self.warnings.clone();
        m.passed = self.passed();
        let json = serde_json::to_string_pretty(&m).expect("manifest serialises");
        put("manifest.json", json.as_bytes())?;
        Ok(written)
    }
}

/// Echo of what produced a run.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub trials: usize,
    pub workers: usize,
    pub versions: Versions,
    pub config: serde_json::Value,
    pub outputs: Vec<String>,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub harness: &'static str,
    pub core: &'static str,
}

impl Versions {
    pub fn current() -> Self {
        Self {
            harness: env!("CARGO_PKG_VERSION"),
            core: subnyq_core::VERSION,
        }
    }
}

/// Shortest round-trip formatting; empty for `None`.
pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}
