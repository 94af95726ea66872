//! Run reports: pass/fail rows, fitted exponents, CSV tables and the JSON summary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::LabError;

pub const SCHEMA_VERSION: u32 = 1;

/// A check passes iff `value <= limit`.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub pass: bool,
    pub note: String,
}

impl Check {
    pub fn at_most(name: &str, value: f64, limit: f64, note: impl Into<String>) -> Self {
        Check {
            name: name.to_string(),
            value,
            limit,
            pass: value <= limit,
            note: note.into(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Fitted {
    pub name: String,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub samples: usize,
    pub target: f64,
}

impl Fitted {
    pub fn new(name: &str, fit: &dispersive_core::DecayFit, target: f64) -> Self {
        Fitted {
            name: name.to_string(),
            slope: fit.slope,
            intercept: fit.intercept,
            r_squared: fit.r_squared,
            samples: fit.n_samples,
            target,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    #[serde(skip)]
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Table {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// Header plus one line per row, numbers with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|&x| format_number(x)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn format_number(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:.16e}")
    }
}

#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub checks: Vec<Check>,
    pub fits: Vec<Fitted>,
    pub tables: Vec<Table>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub version: String,
    pub kind: String,
    pub config_digest: String,
    pub seed: u64,
    pub checks: Vec<Check>,
    pub fits: Vec<Fitted>,
    pub tables: Vec<Table>,
    pub pass: bool,
    pub wall_time_s: f64,
}

pub fn digest(text: &str) -> String {
    let hash = Sha256::digest(text.as_bytes());
    let mut s = String::with_capacity(64);
    for b in hash {
        let _ = write!(s, "{b:02x}");
    }
    s
}

impl RunReport {
    pub fn new(kind: &str, source: &str, seed: u64, outcome: Outcome, wall_time_s: f64) -> Self {
        let pass = outcome.checks.iter().all(|c| c.pass);
        RunReport {
            schema_version: SCHEMA_VERSION,
            version: env!("CARGO_PKG_VERSION").to_string(),
            kind: kind.to_string(),
            config_digest: digest(source),
            seed,
            checks: outcome.checks,
            fits: outcome.fits,
            tables: outcome.tables,
            pass,
            wall_time_s,
        }
    }

    pub fn checks_csv(&self) -> String {
        let mut out = String::from("name,value,limit,pass,note\n");
        for c in &self.checks {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                c.name,
                format_number(c.value),
                format_number(c.limit),
                c.pass,
                c.note.replace(',', ";")
            );
        }
        out
    }

    /// Writes `<prefix>.json`, `<prefix>_checks.csv` and one `<prefix>_<table>.csv` per table.
    pub fn persist(&self, dir: &Path, prefix: &str) -> Result<Vec<PathBuf>, LabError> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let json =
            serde_json::to_string_pretty(self).map_err(|e| LabError::Internal(e.to_string()))?;
        let p = dir.join(format!("{prefix}.json"));
        fs::write(&p, json + "\n")?;
        written.push(p);
        let p = dir.join(format!("{prefix}_checks.csv"));
        fs::write(&p, self.checks_csv())?;
        written.push(p);
        for t in &self.tables {
            let p = dir.join(format!("{prefix}_{}.csv", t.name));
            fs::write(&p, t.to_csv())?;
            written.push(p);
        }
        Ok(written)
    }
}
