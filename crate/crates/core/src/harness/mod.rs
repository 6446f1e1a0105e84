//! Config-driven experiment runner: parses a TOML config, runs one
//! experiment kind and writes a CSV table plus a JSON summary.

pub mod config;
pub mod experiments;
pub mod output;

use std::fs;
use std::path::{Path, PathBuf};

pub use config::{parse_config, parse_config_for, ExperimentConfig, ExperimentKind, InputKind};
pub use experiments::{base_point, run};
pub use output::{config_hash, Cell, CheckStatus, Outcome, RunRecord, Summary, Table};

use crate::error::Result;

/// Loads summaries from JSON files or directories of them, in path order.
pub fn load_summaries(paths: &[PathBuf]) -> Result<Vec<(PathBuf, Summary)>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut inner: Vec<PathBuf> = fs::read_dir(p)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            inner.retain(|f| f.extension().is_some_and(|x| x == "json"));
            inner.sort();
            files.extend(inner);
        } else {
            files.push(p.clone());
        }
    }
    files
        .into_iter()
        .map(|f| {
            let s: Summary = serde_json::from_slice(&fs::read(&f)?)?;
            Ok((f, s))
        })
        .collect()
}

/// One row per estimate, bound or check, joined on the shared name.
pub fn report_table(summaries: &[(PathBuf, Summary)]) -> Table {
    let mut table = Table::new(&["file", "experiment", "d", "n", "name", "estimate", "bound", "check"]);
    for (path, s) in summaries {
        let mut names: Vec<&String> = s.estimates.keys().chain(s.bounds.keys()).chain(s.checks.keys()).collect();
        names.sort();
        names.dedup();
        for name in names {
            let file = path.file_name().map(Path::new).unwrap_or(path).display().to_string();
            let num = |v: Option<&f64>| v.map_or(Cell::Text(String::new()), |x| Cell::Float(*x));
            let check = match s.checks.get(name) {
                Some(CheckStatus::Pass) => "pass",
                Some(CheckStatus::Fail) => "fail",
                None => "",
            };
            table.push(vec![
                file.into(),
                s.experiment.clone().into(),
                s.d.into(),
                s.n.into(),
                name.clone().into(),
                num(s.estimates.get(name)),
                num(s.bounds.get(name)),
                check.into(),
            ]);
        }
    }
    table
}
