//! Output files and matrix input.
//!
//! Every file is rendered to memory and written once. Floats use the
//! shortest representation that round-trips, so identical runs produce
//! identical bytes.

use std::fs;
use std::path::{Path, PathBuf};

use muon_lab_core::optimizer::DirectionKind;
use muon_lab_core::schedule::ConditionReport;
use muon_lab_core::Matrix;
use serde::Serialize;

use crate::error::LabError;
use crate::harness::{DescentReport, EnsembleStats, NoiseReport, ReportRow, Status, Trace};

pub const TRACES: &str = "traces.jsonl";
pub const ENSEMBLE: &str = "ensemble.csv";
pub const REPORT: &str = "report.csv";
pub const DESCENT: &str = "descent.csv";
pub const SCHEDULES: &str = "schedules.csv";
pub const SCHEDULES_REPORT: &str = "report-schedules.csv";
pub const NOISE: &str = "noise.csv";
pub const NOISE_REPORT: &str = "report-noise.csv";
pub const CONFIG_ECHO: &str = "config.toml";
pub const SUMMARY: &str = "summary.csv";

pub const ENSEMBLE_HEADER: [&str; 9] = ["t", "eta", "b", "mean_f", "se_f", "mean_g", "se_g", "mean_g2", "se_g2"];
pub const REPORT_HEADER: [&str; 6] = ["check_id", "t_or_T", "lhs", "rhs", "margin", "status"];
pub const DESCENT_HEADER: [&str; 8] = [
    "t",
    "estimate",
    "stderr",
    "rhs",
    "margin",
    "replicates",
    "status",
    "reason",
];
pub const SCHEDULES_HEADER: [&str; 5] = ["series", "T", "partial_sum", "cap", "status"];
pub const NOISE_HEADER: [&str; 5] = ["b", "estimate", "stderr", "bound", "status"];
pub const SUMMARY_HEADER: [&str; 8] = [
    "check_id",
    "rows",
    "pass",
    "fail",
    "skipped",
    "vacuous",
    "unavailable",
    "info",
];

/// Shortest round-trip decimal; plain notation in the usual range,
/// exponent notation outside it, empty for NaN.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else if x.is_infinite() {
        if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else if x == 0.0 || (1e-4..1e15).contains(&x.abs()) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

pub fn parse_f64(s: &str) -> Option<f64> {
    match s.trim() {
        "" => Some(f64::NAN),
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        v => v.parse().ok(),
    }
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    // writing into a Vec cannot fail
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), LabError> {
    fs::write(path, bytes).map_err(|e| LabError::io(path, e))
}

pub fn ensure_dir(dir: &Path) -> Result<(), LabError> {
    fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))
}

pub fn ensemble_csv(stats: &EnsembleStats) -> Vec<u8> {
    csv_bytes(
        &ENSEMBLE_HEADER,
        stats.rows.iter().map(|r| {
            vec![
                r.t.to_string(),
                fmt_f64(r.eta),
                r.b.to_string(),
                fmt_f64(r.mean_f),
                fmt_f64(r.se_f),
                fmt_f64(r.mean_g),
                fmt_f64(r.se_g),
                fmt_f64(r.mean_g2),
                fmt_f64(r.se_g2),
            ]
        }),
    )
}

pub fn report_csv(rows: &[ReportRow]) -> Vec<u8> {
    csv_bytes(
        &REPORT_HEADER,
        rows.iter().map(|r| {
            vec![
                r.check_id.clone(),
                r.t.to_string(),
                fmt_f64(r.lhs),
                fmt_f64(r.rhs),
                fmt_f64(r.margin),
                r.status.as_str().to_string(),
            ]
        }),
    )
}

pub fn descent_csv(d: &DescentReport) -> Vec<u8> {
    csv_bytes(
        &DESCENT_HEADER,
        d.entries.iter().map(|e| {
            vec![
                e.t.to_string(),
                fmt_f64(e.estimate),
                fmt_f64(e.stderr),
                fmt_f64(e.rhs),
                fmt_f64(e.margin()),
                e.replicates.to_string(),
                e.status.as_str().to_string(),
                e.reason.unwrap_or("").to_string(),
            ]
        }),
    )
}

pub fn schedules_csv(r: &ConditionReport) -> Vec<u8> {
    csv_bytes(
        &SCHEDULES_HEADER,
        r.rows.iter().map(|row| {
            vec![
                row.series.name().to_string(),
                row.horizon.to_string(),
                fmt_f64(row.partial_sum),
                row.cap.map_or_else(|| "unbounded".to_string(), fmt_f64),
                row.status.as_str().to_string(),
            ]
        }),
    )
}

/// Schedule condition rows in the common report layout.
pub fn schedule_report_rows(r: &ConditionReport) -> Vec<ReportRow> {
    r.rows
        .iter()
        .map(|row| ReportRow {
            check_id: format!("schedule/{}/{}", r.method.name(), row.series.name()),
            t: row.horizon,
            lhs: row.partial_sum,
            rhs: row.cap.unwrap_or(f64::INFINITY),
            margin: row.cap.map_or(f64::NAN, |c| c - row.partial_sum),
            status: if row.status.is_pass() {
                Status::Pass
            } else {
                Status::Fail
            },
        })
        .collect()
}

pub fn noise_csv(n: &NoiseReport) -> Vec<u8> {
    csv_bytes(
        &NOISE_HEADER,
        n.rows.iter().map(|r| {
            vec![
                r.b.to_string(),
                fmt_f64(r.estimate),
                fmt_f64(r.stderr),
                fmt_f64(r.bound),
                r.status.as_str().to_string(),
            ]
        }),
    )
}

#[derive(Serialize)]
struct TraceLine<'a> {
    seed: u64,
    trial: u64,
    optimizer: &'a str,
    objective: &'a str,
    noise: &'a str,
    t: u64,
    eta: f64,
    b: u64,
    f: f64,
    g: f64,
    kind: &'static str,
    direction_norm: f64,
    alignment: Option<f64>,
    completed: bool,
}

/// Labels written into every trace line.
#[derive(Debug, Clone)]
pub struct TraceMeta {
    pub seed: u64,
    pub optimizer: String,
    pub objective: String,
    pub noise: String,
}

fn kind_name(k: DirectionKind) -> &'static str {
    match k {
        DirectionKind::Sgd => "sgd",
        DirectionKind::Muon => "muon",
        DirectionKind::SkippedZero => "skipped-zero",
    }
}

/// One JSON object per step, trials in order.
pub fn traces_jsonl(traces: &[Trace], meta: &TraceMeta) -> Vec<u8> {
    let mut out = Vec::new();
    for tr in traces {
        for r in &tr.records {
            let line = TraceLine {
                seed: meta.seed,
                trial: tr.trial,
                optimizer: &meta.optimizer,
                objective: &meta.objective,
                noise: &meta.noise,
                t: r.t,
                eta: r.eta,
                b: r.b,
                f: r.f,
                g: r.g,
                kind: kind_name(r.kind),
                direction_norm: r.direction_norm,
                alignment: r.alignment,
                completed: r.completed,
            };
            serde_json::to_writer(&mut out, &line).expect("plain record serializes");
            out.push(b'\n');
        }
    }
    out
}

fn csv_reader(path: &Path, has_headers: bool) -> Result<csv::Reader<fs::File>, LabError> {
    let file = fs::File::open(path).map_err(|e| LabError::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(has_headers)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn input_error(path: &Path, message: impl Into<String>) -> LabError {
    LabError::Input {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Reads a report CSV back.
pub fn read_report(path: &Path) -> Result<Vec<ReportRow>, LabError> {
    let mut rd = csv_reader(path, true)?;
    let header = rd.headers().map_err(|e| input_error(path, e.to_string()))?.clone();
    if header.iter().ne(REPORT_HEADER) {
        return Err(input_error(path, "not a report file: unexpected header"));
    }
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| input_error(path, e.to_string()))?;
        let bad = || input_error(path, format!("row {}: malformed", i + 2));
        let num = |k: usize| rec.get(k).and_then(parse_f64).ok_or_else(bad);
        rows.push(ReportRow {
            check_id: rec.get(0).ok_or_else(bad)?.to_string(),
            t: rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(bad)?,
            lhs: num(2)?,
            rhs: num(3)?,
            margin: num(4)?,
            status: rec.get(5).and_then(Status::parse).ok_or_else(bad)?,
        });
    }
    Ok(rows)
}

/// Report files in `dir`, sorted by name.
pub fn report_files(dir: &Path) -> Result<Vec<PathBuf>, LabError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| LabError::io(dir, e))? {
        let path = entry.map_err(|e| LabError::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with("report") && name.ends_with(".csv") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// A dense matrix from a headerless numeric CSV, one row per line.
pub fn read_matrix(path: &Path) -> Result<Matrix, LabError> {
    let mut rd = csv_reader(path, false)?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| input_error(path, e.to_string()))?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| input_error(path, format!("line {}: not a number", i + 1)))?;
        match cols {
            None => cols = Some(vals.len()),
            Some(c) if c != vals.len() => {
                return Err(input_error(path, format!("line {}: expected {c} values", i + 1)));
            }
            _ => {}
        }
        data.extend(vals);
        rows += 1;
    }
    let cols = cols.ok_or_else(|| input_error(path, "empty matrix"))?;
    Ok(Matrix::from_vec(rows, cols, data)?)
}

/// A matrix as headerless CSV.
pub fn matrix_csv(m: &Matrix) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for i in 0..m.rows() {
        w.write_record(m.row(i).iter().map(|&x| fmt_f64(x)))
            .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}
