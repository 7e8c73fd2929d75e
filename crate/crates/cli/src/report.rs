//! Run reports and their JSON, CSV and SVG renderings.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ctlab::estimators::DecayFit;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::Scenario;
use crate::error::CliError;
use crate::svg::loglog_plot;

/// One CSV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub scenario: String,
    pub estimator: String,
    pub params: Value,
    pub value: f64,
    pub diag: Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub fit: Option<DecayFit>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorError {
    pub estimator: String,
    pub message: String,
    /// Process exit code this failure maps to.
    pub code: i32,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunDiagnostics {
    pub max_boundary_mass: f64,
    pub max_norm_drift: f64,
    pub max_charge_drift: Option<f64>,
    /// Wave-operator tail estimates per channel vector.
    pub truncation_tails: Vec<f64>,
    /// Growth-envelope or boundary-guard trips.
    pub guard_trips: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    /// Fully resolved scenario, defaults included.
    pub scenario: Scenario,
    pub rows: Vec<Row>,
    pub series: Vec<Series>,
    pub assertions: Vec<Assertion>,
    pub errors: Vec<EstimatorError>,
    pub diagnostics: RunDiagnostics,
    pub warnings: Vec<String>,
}

impl RunReport {
    pub fn new(command: &str, scenario: Scenario) -> Self {
        Self {
            command: command.to_string(),
            scenario,
            rows: Vec::new(),
            series: Vec::new(),
            assertions: Vec::new(),
            errors: Vec::new(),
            diagnostics: RunDiagnostics::default(),
            warnings: Vec::new(),
        }
    }

    pub fn row(&mut self, estimator: &str, params: Value, value: f64, diag: Value) {
        self.rows.push(Row {
            scenario: self.scenario.name.clone(),
            estimator: estimator.to_string(),
            params,
            value,
            diag,
        });
    }

    pub fn assert(&mut self, name: &str, passed: bool, detail: String) {
        self.assertions.push(Assertion {
            name: name.to_string(),
            passed,
            detail,
        });
    }

    pub fn guard_tripped(&self) -> bool {
        !self.diagnostics.guard_trips.is_empty()
    }

    /// Exit code: estimator errors first (validation, then solver), then guard trips, then
    /// failed assertions.
    pub fn exit_code(&self) -> i32 {
        if let Some(code) = self.errors.iter().map(|e| e.code).filter(|c| *c == 2).max() {
            return code;
        }
        if !self.errors.is_empty() {
            return 3;
        }
        if self.guard_tripped() {
            return 4;
        }
        if self.assertions.iter().any(|a| !a.passed) {
            return 1;
        }
        0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Format {
    Json,
    Csv,
    Svg,
}

impl FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            "svg" => Ok(Format::Svg),
            other => Err(format!("unknown format {other:?} (expected json, csv or svg)")),
        }
    }
}

pub fn parse_formats(s: &str) -> Result<BTreeSet<Format>, String> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(Format::from_str).collect()
}

pub const CSV_HEADER: [&str; 5] = ["scenario", "estimator", "param_json", "value", "diag_json"];

/// Writes the requested renderings into `dir` and returns the paths written.
pub fn emit_report(report: &RunReport, dir: &Path, formats: &BTreeSet<Format>) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    if formats.contains(&Format::Json) {
        let path = dir.join("report.json");
        fs::write(&path, serde_json::to_string_pretty(report)? + "\n")?;
        written.push(path);
    }
    if formats.contains(&Format::Csv) && !report.rows.is_empty() {
        let path = dir.join("results.csv");
        write_csv(&report.rows, &path)?;
        written.push(path);
        for s in &report.series {
            let path = dir.join(format!("series_{}.csv", s.name));
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["t", "value"])?;
            for (t, v) in s.times.iter().zip(&s.values) {
                w.write_record([t.to_string(), v.to_string()])?;
            }
            w.flush()?;
            written.push(path);
        }
    }
    if formats.contains(&Format::Svg) {
        for s in report.series.iter().filter(|s| s.fit.is_some()) {
            let path = dir.join(format!("{}.svg", s.name));
            fs::write(&path, loglog_plot(s))?;
            written.push(path);
        }
    }
    Ok(written)
}

pub fn write_csv(rows: &[Row], path: &Path) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.scenario.clone(),
            r.estimator.clone(),
            serde_json::to_string(&r.params)?,
            r.value.to_string(),
            serde_json::to_string(&r.diag)?,
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a `results.csv` back into rows.
pub fn read_csv(path: &Path) -> Result<Vec<Row>, CliError> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(CliError::Validation(format!("unexpected CSV header {header:?}")));
    }
    r.records()
        .map(|rec| {
            let rec = rec?;
            let value = rec[3]
                .parse::<f64>()
                .map_err(|e| CliError::Validation(format!("bad value {:?}: {e}", &rec[3])))?;
            Ok(Row {
                scenario: rec[0].to_string(),
                estimator: rec[1].to_string(),
                params: serde_json::from_str(&rec[2])?,
                value,
                diag: serde_json::from_str(&rec[4])?,
            })
        })
        .collect()
}
