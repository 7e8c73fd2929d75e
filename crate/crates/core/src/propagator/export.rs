//! Trace export: one file per snapshot plus a JSON manifest.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Diagnostics, Field, PropagatorTrace, StepperConfig};
use crate::error::{invalid_input, Result};
use crate::gridfield::GridParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceFormat {
    /// Little-endian `f64` pairs `(re, im)`, components stored one after another.
    Binary,
    /// `index, x_1..x_n, re_1, im_1[, re_2, im_2]` per grid point.
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceManifest {
    pub grid: GridParams,
    pub components: usize,
    pub format: TraceFormat,
    pub files: Vec<String>,
    pub times: Vec<f64>,
    pub diagnostics: Vec<Diagnostics>,
    pub valid: bool,
    pub warnings: Vec<String>,
    pub config: StepperConfig,
}

/// Writes the stored snapshots of `trace` into `dir` and returns the manifest
/// (also written as `manifest.json`).
pub fn export_trace<F: Field>(trace: &PropagatorTrace<F>, dir: &Path, format: TraceFormat) -> Result<TraceManifest> {
    if trace.fields.len() != trace.times.len() {
        return Err(invalid_input("trace does not store its snapshots"));
    }
    fs::create_dir_all(dir)?;
    let ext = match format {
        TraceFormat::Binary => "bin",
        TraceFormat::Csv => "csv",
    };
    let mut files = Vec::with_capacity(trace.fields.len());
    for (k, field) in trace.fields.iter().enumerate() {
        let name = format!("snapshot_{k:05}.{ext}");
        let mut out = BufWriter::new(fs::File::create(dir.join(&name))?);
        let comps = field.components();
        match format {
            TraceFormat::Binary => {
                for c in &comps {
                    for z in c.iter() {
                        out.write_all(&z.re.to_le_bytes())?;
                        out.write_all(&z.im.to_le_bytes())?;
                    }
                }
            }
            TraceFormat::Csv => {
                let g = field.grid();
                let axes = ["x1", "x2", "x3"];
                let mut header = vec!["index".to_string()];
                header.extend(axes[..g.dim()].iter().map(|s| s.to_string()));
                for c in 1..=comps.len() {
                    header.push(format!("re{c}"));
                    header.push(format!("im{c}"));
                }
                writeln!(out, "{}", header.join(","))?;
                for i in 0..g.len() {
                    let x = g.coords(i);
                    write!(out, "{i}")?;
                    for xa in &x[..g.dim()] {
                        write!(out, ",{xa:e}")?;
                    }
                    for c in &comps {
                        write!(out, ",{:e},{:e}", c[i].re, c[i].im)?;
                    }
                    writeln!(out)?;
                }
            }
        }
        out.flush()?;
        files.push(name);
    }
    let first = &trace.initial;
    let manifest = TraceManifest {
        grid: first.grid().params(),
        components: first.components().len(),
        format,
        files,
        times: trace.times.clone(),
        diagnostics: trace.diagnostics.clone(),
        valid: trace.valid,
        warnings: trace.warnings.clone(),
        config: trace.config,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| invalid_input(e.to_string()))?;
    fs::write(dir.join("manifest.json"), json)?;
    Ok(manifest)
}
