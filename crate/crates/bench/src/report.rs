//! CSV/JSON emission for reports and per-run traces.
//!
//! Floats are written with 17 significant digits (`{:.16e}`) so files
//! round-trip bit-exactly. Missing values are empty in CSV and `null` in
//! JSON. Output is a pure function of the rows: no timestamps, no maps with
//! unstable order.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::value::RawValue;

use precond_sgd::optimizer::RunTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

pub const REPORT_COLUMNS: [&str; 8] = [
    "experiment",
    "seed",
    "K",
    "suboptimality",
    "slope",
    "bound_margin",
    "audit_failures",
    "wall_ms",
];

pub const TRACE_COLUMNS: [&str; 7] = [
    "k",
    "suboptimality",
    "dist_to_opt",
    "iterate_norm",
    "ftl_btl_gap",
    "loewner_excess",
    "trace_h_inv",
];

pub const SUMMARY_COLUMNS: [&str; 4] = ["experiment", "K", "mean_suboptimality", "slope"];

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    /// `<experiment id>/<algorithm>`.
    pub experiment: String,
    pub seed: u64,
    pub k: usize,
    pub suboptimality: f64,
    pub slope: Option<f64>,
    pub bound_margin: Option<f64>,
    pub audit_failures: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub experiment: String,
    pub k: usize,
    pub mean_suboptimality: f64,
    pub slope: Option<f64>,
}

enum Cell {
    Text(String),
    Int(u64),
    Num(Option<f64>),
}

pub fn format_number(x: f64) -> Option<String> {
    x.is_finite().then(|| format!("{x:.16e}"))
}

fn csv_field(c: &Cell) -> String {
    match c {
        Cell::Text(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
        Cell::Text(s) => s.clone(),
        Cell::Int(i) => i.to_string(),
        Cell::Num(x) => x.and_then(format_number).unwrap_or_default(),
    }
}

fn json_field(c: &Cell) -> Box<RawValue> {
    let text = match c {
        Cell::Text(s) => serde_json::to_string(s).expect("string serializes"),
        Cell::Int(i) => i.to_string(),
        Cell::Num(x) => x.and_then(format_number).unwrap_or_else(|| "null".into()),
    };
    RawValue::from_string(text).expect("valid JSON literal")
}

fn render(columns: &[&str], rows: &[Vec<Cell>], format: Format) -> String {
    match format {
        Format::Csv => {
            let mut out = columns.join(",");
            out.push('\n');
            for row in rows {
                let fields: Vec<String> = row.iter().map(csv_field).collect();
                out.push_str(&fields.join(","));
                out.push('\n');
            }
            out
        }
        Format::Json => {
            #[derive(Serialize)]
            struct Obj<'a>(#[serde(serialize_with = "ordered")] Vec<(&'a str, Box<RawValue>)>);

            fn ordered<S: serde::Serializer>(
                v: &[(&str, Box<RawValue>)],
                s: S,
            ) -> Result<S::Ok, S::Error> {
                use serde::ser::SerializeMap;
                let mut m = s.serialize_map(Some(v.len()))?;
                for (k, val) in v {
                    m.serialize_entry(k, val)?;
                }
                m.end()
            }

            let objs: Vec<Obj> = rows
                .iter()
                .map(|row| Obj(columns.iter().copied().zip(row.iter().map(json_field)).collect()))
                .collect();
            let mut out = serde_json::to_string_pretty(&objs).expect("rows serialize");
            out.push('\n');
            out
        }
    }
}

fn write_file(path: &Path, contents: &str) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(contents.as_bytes())?;
    f.sync_all()
}

pub fn render_report(rows: &[ReportRow], format: Format) -> String {
    let cells: Vec<Vec<Cell>> = rows
        .iter()
        .map(|r| {
            vec![
                Cell::Text(r.experiment.clone()),
                Cell::Int(r.seed),
                Cell::Int(r.k as u64),
                Cell::Num(Some(r.suboptimality)),
                Cell::Num(r.slope),
                Cell::Num(r.bound_margin),
                Cell::Int(r.audit_failures as u64),
                Cell::Num(Some(r.wall_ms)),
            ]
        })
        .collect();
    render(&REPORT_COLUMNS, &cells, format)
}

/// Writes the aggregate report. Rows must be nonempty.
pub fn emit_report(rows: &[ReportRow], path: &Path, format: Format) -> io::Result<()> {
    if rows.is_empty() {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "report has no rows"));
    }
    write_file(path, &render_report(rows, format))
}

pub fn render_summary(rows: &[SummaryRow], format: Format) -> String {
    let cells: Vec<Vec<Cell>> = rows
        .iter()
        .map(|r| {
            vec![
                Cell::Text(r.experiment.clone()),
                Cell::Int(r.k as u64),
                Cell::Num(Some(r.mean_suboptimality)),
                Cell::Num(r.slope),
            ]
        })
        .collect();
    render(&SUMMARY_COLUMNS, &cells, format)
}

pub fn emit_summary(rows: &[SummaryRow], path: &Path, format: Format) -> io::Result<()> {
    write_file(path, &render_summary(rows, format))
}

/// One row per iteration, excluding wall time so identical runs produce
/// identical bytes.
pub fn render_trace(trace: &RunTrace, format: Format) -> String {
    let cells: Vec<Vec<Cell>> = trace
        .records
        .iter()
        .map(|r| {
            vec![
                Cell::Int(r.k as u64),
                Cell::Num(Some(r.suboptimality)),
                Cell::Num(Some(r.dist_to_opt)),
                Cell::Num(Some(r.iterate_norm)),
                Cell::Num(r.ftl_btl_gap),
                Cell::Num(r.loewner_excess),
                Cell::Num(Some(r.trace_h_inv)),
            ]
        })
        .collect();
    render(&TRACE_COLUMNS, &cells, format)
}

pub fn write_trace(trace: &RunTrace, path: &Path, format: Format) -> io::Result<()> {
    write_file(path, &render_trace(trace, format))
}
