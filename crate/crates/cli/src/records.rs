//! Result rows and the run summary.
//!
//! The CSV starts with a version line, `# homlab-results v1`, followed by the
//! column header. Rows are keyed by
//! `(run_id, quantity, xi_index, t, realization, part)`; `realization` is
//! empty on aggregate rows. Only the columns in [`TIMING_COLUMNS`] change
//! between reruns of the same configuration.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use homlab_core::{Matrix, SolveRecord, Summary};
use serde::Serialize;
use serde_json::Value;

pub const CSV_VERSION: u32 = 1;
pub const CSV_VERSION_LINE: &str = "# homlab-results v1";
pub const SUMMARY_SCHEMA: &str = "homlab-summary";
pub const SUMMARY_VERSION: u32 = 1;

pub const COLUMNS: [&str; 20] = [
    "run_id",
    "command",
    "quantity",
    "xi_index",
    "xi",
    "t",
    "realization",
    "part",
    "param",
    "value",
    "std",
    "ci_half_width",
    "flags",
    "gap",
    "iterations",
    "primal",
    "dual",
    "cells_per_side",
    "wall_time_s",
    "written_unix_ms",
];

/// Columns allowed to differ between reruns.
pub const TIMING_COLUMNS: [&str; 2] = ["wall_time_s", "written_unix_ms"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRecord {
    pub run_id: String,
    pub command: String,
    /// What `value` measures.
    pub quantity: String,
    pub xi_index: usize,
    pub xi: String,
    pub t: f64,
    pub realization: Option<u64>,
    /// Sub-item within one `(ξ, t, realization)`: subcube, segment point,
    /// scale, δ, glue instance.
    pub part: usize,
    /// Scalar parameter attached to `part` (scale, δ, segment position).
    pub param: Option<f64>,
    pub value: f64,
    pub std: Option<f64>,
    pub ci_half_width: Option<f64>,
    /// `;`-separated flags; empty when clean.
    pub flags: String,
    pub gap: Option<f64>,
    pub iterations: Option<usize>,
    pub primal: Option<f64>,
    pub dual: Option<f64>,
    pub cells_per_side: Option<usize>,
    pub wall_time_s: f64,
    pub written_unix_ms: u64,
}

pub fn format_xi(xi: &Matrix<f64>) -> String {
    let rows: Vec<String> = (0..xi.rows())
        .map(|i| {
            let r: Vec<String> = (0..xi.cols()).map(|j| format!("{}", xi.get(i, j))).collect();
            format!("[{}]", r.join(","))
        })
        .collect();
    format!("[{}]", rows.join(","))
}

impl ResultRecord {
    pub fn new(quantity: &str, xi_index: usize, xi: &str, t: f64, realization: Option<u64>, part: usize, value: f64) -> Self {
        Self {
            run_id: String::new(),
            command: String::new(),
            quantity: quantity.to_string(),
            xi_index,
            xi: xi.to_string(),
            t,
            realization,
            part,
            param: None,
            value,
            std: None,
            ci_half_width: None,
            flags: String::new(),
            gap: None,
            iterations: None,
            primal: None,
            dual: None,
            cells_per_side: None,
            wall_time_s: 0.0,
            written_unix_ms: 0,
        }
    }

    pub fn from_solve(quantity: &str, xi: &str, r: &SolveRecord) -> Self {
        let mut out = Self::new(quantity, r.xi_index, xi, r.t, Some(r.realization), r.part, r.value);
        if r.flagged() {
            out.flags = "not_certified".into();
        }
        out.gap = Some(r.gap);
        out.iterations = Some(r.iterations);
        out.primal = Some(r.primal);
        out.dual = Some(r.dual);
        out.cells_per_side = Some(r.cells_per_side);
        out.wall_time_s = r.wall_time_s;
        out
    }

    pub fn aggregate(quantity: &str, xi_index: usize, xi: &str, t: f64, s: &Summary) -> Self {
        let mut out = Self::new(quantity, xi_index, xi, t, None, 0, s.mean);
        out.std = Some(s.std);
        out.ci_half_width = Some(s.ci_half_width);
        out
    }

    pub fn with_param(mut self, p: f64) -> Self {
        self.param = Some(p);
        self
    }

    pub fn with_flag(mut self, flag: &str) -> Self {
        if !self.flags.is_empty() {
            self.flags.push(';');
        }
        self.flags.push_str(flag);
        self
    }
}

pub fn unix_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

pub fn write_csv(path: &Path, run_id: &str, command: &str, records: &mut [ResultRecord]) -> std::io::Result<()> {
    let mut out = Vec::new();
    writeln!(out, "{CSV_VERSION_LINE}")?;
    {
        let mut w = csv::Writer::from_writer(&mut out);
        let stamp = unix_ms();
        for r in records.iter_mut() {
            r.run_id = run_id.to_string();
            r.command = command.to_string();
            r.written_unix_ms = stamp;
            w.serialize(&*r).map_err(std::io::Error::other)?;
        }
        if records.is_empty() {
            w.write_record(COLUMNS)?;
        }
        w.flush()?;
    }
    fs::write(path, out)
}

/// The CSV with the version line and timing columns removed, for
/// reproducibility comparisons.
pub fn strip_timing(csv_text: &str) -> String {
    let mut lines = csv_text.lines();
    let mut out = String::new();
    let Some(version) = lines.next() else { return out };
    out.push_str(version);
    out.push('\n');
    let body: String = lines.map(|l| format!("{l}\n")).collect();
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    let headers = rdr.headers().cloned().unwrap_or_default();
    let keep: Vec<usize> = headers.iter().enumerate().filter(|(_, h)| !TIMING_COLUMNS.contains(h)).map(|(i, _)| i).collect();
    let pick = |rec: &csv::StringRecord| keep.iter().map(|&i| rec.get(i).unwrap_or("")).collect::<Vec<_>>().join(",");
    out.push_str(&pick(&headers));
    out.push('\n');
    for rec in rdr.records().flatten() {
        out.push_str(&pick(&rec));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Error,
}

#[derive(Debug, Clone, Serialize)]
pub struct Environment {
    pub workers: usize,
    pub started_unix_ms: u64,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub schema: &'static str,
    pub schema_version: u32,
    pub csv_version: u32,
    pub run_id: String,
    pub command: String,
    pub seed: u64,
    pub verdict: Verdict,
    pub exit_code: i32,
    pub error: Option<String>,
    /// Some estimate had too many uncertified solves.
    pub flagged: bool,
    pub csv: String,
    pub records: usize,
    pub constants: Option<Value>,
    pub estimates: Vec<Value>,
    pub reports: Vec<homlab_core::PropertyReport>,
    pub details: Value,
    pub config: Value,
    pub environment: Environment,
}

pub fn write_summary(path: &Path, s: &RunSummary) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(s).map_err(std::io::Error::other)?;
    fs::write(path, text + "\n")
}

pub struct OutputPaths {
    pub csv: PathBuf,
    pub summary: PathBuf,
    pub dir: PathBuf,
}

impl OutputPaths {
    pub fn new(dir: &Path, stem: &str) -> Self {
        Self {
            csv: dir.join(format!("{stem}.csv")),
            summary: dir.join(format!("{stem}.summary.json")),
            dir: dir.to_path_buf(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_matches_record_fields() {
        let mut recs = vec![ResultRecord::new("x", 0, "[[1]]", 1.0, Some(0), 0, 2.0)];
        let dir = std::env::temp_dir().join(format!("homlab-rec-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("a.csv");
        write_csv(&p, "id", "cmd", &mut recs).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(CSV_VERSION_LINE));
        assert_eq!(lines.next().unwrap(), COLUMNS.join(","));
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn timing_columns_are_dropped() {
        let a = "# v\nrun_id,value,wall_time_s,written_unix_ms\nx,1,0.5,17\n";
        let b = "# v\nrun_id,value,wall_time_s,written_unix_ms\nx,1,0.7,99\n";
        assert_eq!(strip_timing(a), strip_timing(b));
        assert_eq!(strip_timing(a), "# v\nrun_id,value\nx,1\n");
    }

    #[test]
    fn xi_is_compact() {
        let xi = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.0, -2.0]]);
        assert_eq!(format_xi(&xi), "[[1,0.5],[0,-2]]");
    }
}
