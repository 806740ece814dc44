//! Matrix CSV files and plain-text reports.

use std::fmt::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::analyzer::{AnalysisReport, MatrixKind, UsageMatrix, Verdict};

const DERIVABLE: &str = "Derivable";
const DERIVED: &str = "Derive";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReportError {
    #[error("csv: {0}")]
    Csv(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

fn csv_err(e: impl std::fmt::Display) -> ReportError {
    ReportError::Csv(e.to_string())
}

/// Header `KIND,cols..,Derivable`, one line per row, then the `Derive` line.
pub fn matrix_to_csv(m: &UsageMatrix) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header = std::iter::once(m.kind.as_str().to_string()).chain(m.cols.iter().cloned()).chain([DERIVABLE.to_string()]);
    let mut records: Vec<Vec<String>> = vec![header.collect()];
    for (i, r) in m.rows.iter().enumerate() {
        let mut rec = vec![r.clone()];
        rec.extend(m.cells[i].iter().map(u8::to_string));
        rec.push(m.derivable_col[i].map(|d| d.to_string()).unwrap_or_default());
        records.push(rec);
    }
    let mut last = vec![DERIVED.to_string()];
    last.extend(m.derived_row.iter().map(i8::to_string));
    last.push(String::new());
    records.push(last);
    for rec in records {
        w.write_record(&rec).expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("flushing to memory")).expect("csv output is utf-8")
}

pub fn matrix_from_csv(text: &str) -> Result<UsageMatrix, ReportError> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
    let records: Vec<csv::StringRecord> = r.records().collect::<Result<_, _>>().map_err(csv_err)?;
    let (header, rest) = records.split_first().ok_or_else(|| csv_err("empty matrix file"))?;
    let (derived, body) = rest.split_last().ok_or_else(|| csv_err("missing Derive line"))?;
    let kind = match header.get(0) {
        Some("MUP") => MatrixKind::Mup,
        Some("MUO") => MatrixKind::Muo,
        Some("MUM") => MatrixKind::Mum,
        other => return Err(csv_err(format!("unknown matrix kind {other:?}"))),
    };
    let width = header.len();
    if width < 2 || header.get(width - 1) != Some(DERIVABLE) {
        return Err(csv_err("header must end with Derivable"));
    }
    let cols: Vec<String> = header.iter().skip(1).take(width - 2).map(str::to_string).collect();
    let mut m = UsageMatrix::new(kind, body.iter().map(|r| r.get(0).unwrap_or("").to_string()).collect(), cols);
    for (i, rec) in body.iter().enumerate() {
        if rec.len() != width {
            return Err(csv_err(format!("row {} has {} fields, expected {width}", i + 1, rec.len())));
        }
        for j in 0..width - 2 {
            m.cells[i][j] = rec[j + 1].parse().map_err(csv_err)?;
        }
        let d = &rec[width - 1];
        m.derivable_col[i] = if d.is_empty() { None } else { Some(d.parse().map_err(csv_err)?) };
    }
    if derived.len() != width || derived.get(0) != Some(DERIVED) {
        return Err(csv_err("malformed Derive line"));
    }
    for j in 0..width - 2 {
        m.derived_row[j] = derived[j + 1].parse().map_err(csv_err)?;
    }
    Ok(m)
}

/// Write every matrix of a report under `dir`; returns the files written.
pub fn write_matrices(report: &AnalysisReport, dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let io = |p: &Path, e: std::io::Error| ReportError::Io { path: p.display().to_string(), message: e.to_string() };
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let mut files = Vec::new();
    let mut emit = |name: String, m: &UsageMatrix| -> Result<(), ReportError> {
        let p = dir.join(name);
        std::fs::write(&p, matrix_to_csv(m)).map_err(|e| io(&p, e))?;
        files.push(p);
        Ok(())
    };
    for cm in &report.matrices {
        emit(format!("MUP_{}.csv", cm.class), &cm.mup)?;
        emit(format!("MUO_{}.csv", cm.class), &cm.muo)?;
    }
    emit("MUM.csv".to_string(), &report.mum)?;
    Ok(files)
}

/// Aligned text table of a matrix.
pub fn render_matrix(m: &UsageMatrix) -> String {
    let first = m.rows.iter().map(String::len).chain([DERIVED.len(), 3]).max().unwrap_or(0);
    let widths: Vec<usize> = m.cols.iter().map(|c| c.chars().count().max(2)).collect();
    let mut out = String::new();
    let _ = write!(out, "{:first$}", m.kind.as_str());
    for (c, w) in m.cols.iter().zip(&widths) {
        let _ = write!(out, " {c:>w$}");
    }
    let _ = writeln!(out, " {DERIVABLE}");
    for (i, r) in m.rows.iter().enumerate() {
        let _ = write!(out, "{r:first$}");
        for (v, w) in m.cells[i].iter().zip(&widths) {
            let _ = write!(out, " {v:>w$}");
        }
        let d = m.derivable_col[i].map_or("?".to_string(), |d| d.to_string());
        let _ = writeln!(out, " {d}");
    }
    let _ = write!(out, "{DERIVED:first$}");
    for (v, w) in m.derived_row.iter().zip(&widths) {
        let _ = write!(out, " {v:>w$}");
    }
    out.push('\n');
    out
}

/// `WDW_COLOR=1` turns coloring on; anything else leaves it off.
pub fn color_from_env() -> bool {
    std::env::var("WDW_COLOR").is_ok_and(|v| v == "1")
}

fn paint(text: &str, code: &str, color: bool) -> String {
    if color {
        format!("\x1b[{code}m{text}\x1b[0m")
    } else {
        text.to_string()
    }
}

/// One `name: VERDICT` line per method.
pub fn render_verdicts(report: &AnalysisReport, color: bool) -> String {
    let mut out = String::new();
    for (label, v) in report.summary_lines() {
        let code = match v {
            Verdict::Derivable => "32",
            Verdict::Missing(_) => "31",
            Verdict::Cycle(_) => "33",
        };
        let _ = writeln!(out, "{label}: {}", paint(&v.to_string(), code, color));
    }
    out
}

/// Full analysis report: local matrices, the method matrix, verdicts and behavior.
pub fn render_report(report: &AnalysisReport, color: bool) -> String {
    let mut out = String::new();
    for cm in &report.matrices {
        let _ = writeln!(out, "== {} ==", cm.class);
        out.push_str(&render_matrix(&cm.mup));
        if !cm.muo.cols.is_empty() {
            out.push_str(&render_matrix(&cm.muo));
        }
        out.push('\n');
    }
    out.push_str("== methods ==\n");
    out.push_str(&render_matrix(&report.mum));
    out.push('\n');
    out.push_str(&render_verdicts(report, color));
    if !report.behavior.is_empty() {
        out.push('\n');
        for (class, methods) in &report.behavior {
            let _ = writeln!(out, "{class} behavior: {{{}}}", methods.join(", "));
        }
    }
    out
}
