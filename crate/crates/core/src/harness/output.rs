//! CSV tables, JSON summaries and their files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Bool(bool),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Float(x) => format!("{x:?}"),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
        }
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<i8> for Cell {
    fn from(v: i8) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_owned())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// Rows of a CSV file under a fixed header.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.header.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        w.into_inner().map_err(|e| e.into_error().into())
    }
}

#[macro_export]
#[doc(hidden)]
macro_rules! row {
    ($($x:expr),* $(,)?) => {
        vec![$($crate::harness::Cell::from($x)),*]
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
}

impl From<bool> for CheckStatus {
    fn from(ok: bool) -> Self {
        if ok {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        }
    }
}

/// The JSON summary of one run. Estimates and bounds sharing a name are
/// paired by `report`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub d: usize,
    pub n: usize,
    pub estimates: BTreeMap<String, f64>,
    pub bounds: BTreeMap<String, f64>,
    pub checks: BTreeMap<String, CheckStatus>,
    pub runtime_seconds: f64,
}

impl Summary {
    pub fn all_pass(&self) -> bool {
        self.checks.values().all(|c| *c == CheckStatus::Pass)
    }
}

/// Numbers an experiment hands back to the harness.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub table: Option<Table>,
    pub estimates: BTreeMap<String, f64>,
    pub bounds: BTreeMap<String, f64>,
    pub checks: BTreeMap<String, CheckStatus>,
}

impl Outcome {
    pub fn estimate(&mut self, name: impl Into<String>, v: f64) {
        self.estimates.insert(name.into(), v);
    }

    pub fn bound(&mut self, name: impl Into<String>, v: f64) {
        self.bounds.insert(name.into(), v);
    }

    pub fn check(&mut self, name: impl Into<String>, ok: bool) {
        self.checks.insert(name.into(), ok.into());
    }
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub csv: Vec<u8>,
    pub summary: Summary,
}

impl RunRecord {
    pub fn csv_path(&self, out: &Path) -> PathBuf {
        out.join(format!("{}.csv", self.config.kind))
    }

    pub fn json_path(&self, out: &Path) -> PathBuf {
        out.join(format!("{}.json", self.config.kind))
    }

    /// Writes `<kind>.csv`, `<kind>.json` and `<kind>.toml` under `out`.
    pub fn write(&self, out: &Path) -> Result<()> {
        fs::create_dir_all(out)?;
        fs::write(self.csv_path(out), &self.csv)?;
        fs::write(self.json_path(out), serde_json::to_vec_pretty(&self.summary)?)?;
        fs::write(out.join(format!("{}.toml", self.config.kind)), self.config.to_toml())?;
        Ok(())
    }
}

pub fn config_hash(config: &ExperimentConfig) -> String {
    hex::encode(Sha256::digest(config.to_toml().as_bytes()))
}
