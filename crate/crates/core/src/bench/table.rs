//! Markdown and CSV rendering of convergence reports.

use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use super::{BenchError, ConvergenceReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Markdown,
}

impl FromStr for TableFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(TableFormat::Csv),
            "markdown" | "md" => Ok(TableFormat::Markdown),
            other => Err(format!("unknown format '{other}' (expected csv|markdown)")),
        }
    }
}

/// Scientific notation with four decimals and a two-digit signed exponent: `6.7697e-01`.
pub fn format_sci(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let s = format!("{v:.4e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", exp.abs())
}

pub fn format_order(v: Option<f64>) -> String {
    v.map_or_else(|| "--".to_string(), |o| format!("{o:.4}"))
}

fn level_header(report: &ConvergenceReport) -> &'static str {
    if report.dim == 2 {
        "1/h"
    } else {
        "Level"
    }
}

#[derive(Serialize)]
struct CsvRow<'a> {
    case: &'a str,
    algorithm: String,
    mu: f64,
    lambda: f64,
    level: usize,
    h: f64,
    n_free: usize,
    energy_error: f64,
    energy_order: Option<f64>,
    l2_error: f64,
    l2_order: Option<f64>,
    energy_error_fmt: String,
    energy_order_fmt: String,
    l2_error_fmt: String,
    l2_order_fmt: String,
    solver: &'a str,
    iterations: usize,
    relative_residual: f64,
    backward_error: f64,
    seconds: f64,
}

fn render_csv(reports: &[ConvergenceReport]) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for report in reports {
        for row in &report.rows {
            writer
                .serialize(CsvRow {
                    case: &report.case,
                    algorithm: report.algorithm.to_string(),
                    mu: report.mu,
                    lambda: report.lambda,
                    level: row.level,
                    h: row.h,
                    n_free: row.n_free,
                    energy_error: row.energy_error,
                    energy_order: row.energy_order,
                    l2_error: row.l2_error,
                    l2_order: row.l2_order,
                    energy_error_fmt: format_sci(row.energy_error),
                    energy_order_fmt: format_order(row.energy_order),
                    l2_error_fmt: format_sci(row.l2_error),
                    l2_order_fmt: format_order(row.l2_order),
                    solver: &row.solver,
                    iterations: row.iterations,
                    relative_residual: row.relative_residual,
                    backward_error: row.backward_error,
                    seconds: row.seconds,
                })
                .expect("writing to memory");
        }
    }
    String::from_utf8(writer.into_inner().expect("flush to memory")).expect("csv is utf-8")
}

fn render_markdown(reports: &[ConvergenceReport]) -> String {
    let mut out = String::new();
    for (k, report) in reports.iter().enumerate() {
        if k > 0 {
            out.push('\n');
        }
        out.push_str(&format!(
            "**{}**, {} algorithm, mu = {}, lambda = {}\n\n",
            report.case,
            report.algorithm,
            format_sci(report.mu),
            format_sci(report.lambda)
        ));
        let header = [level_header(report), "energy error", "order", "L2 error", "order"];
        let rows: Vec<[String; 5]> = report
            .rows
            .iter()
            .map(|r| {
                [
                    r.level.to_string(),
                    format_sci(r.energy_error),
                    format_order(r.energy_order),
                    format_sci(r.l2_error),
                    format_order(r.l2_order),
                ]
            })
            .collect();
        let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
        for row in &rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let line = |cells: Vec<String>| -> String {
            let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, &w)| format!("{c:>w$}")).collect();
            format!("| {} |\n", padded.join(" | "))
        };
        out.push_str(&line(header.iter().map(|s| s.to_string()).collect()));
        out.push_str(&format!(
            "|{}|\n",
            widths.iter().map(|&w| format!("{}:", "-".repeat(w + 1))).collect::<Vec<_>>().join("|")
        ));
        for row in rows {
            out.push_str(&line(row.to_vec()));
        }
    }
    out
}

pub fn render_table(reports: &[ConvergenceReport], format: TableFormat) -> String {
    match format {
        TableFormat::Csv => render_csv(reports),
        TableFormat::Markdown => render_markdown(reports),
    }
}

/// Writes the table to `destination`, or to stdout when `None`.
pub fn emit_table(reports: &[ConvergenceReport], format: TableFormat, destination: Option<&Path>) -> Result<(), BenchError> {
    let text = render_table(reports, format);
    match destination {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::Algorithm;
    use crate::bench::ConvergenceRow;

    fn row(level: usize, e: f64, l2: f64, orders: Option<(f64, f64)>) -> ConvergenceRow {
        ConvergenceRow {
            level,
            h: 1.0 / level as f64,
            n_free: 10,
            energy_error: e,
            energy_order: orders.map(|o| o.0),
            l2_error: l2,
            l2_order: orders.map(|o| o.1),
            solver: "cholesky".into(),
            iterations: 0,
            relative_residual: 1e-15,
            backward_error: 1e-17,
            seconds: 0.1,
        }
    }

    fn report(rows: Vec<ConvergenceRow>) -> ConvergenceReport {
        ConvergenceReport { case: "ex2d1".into(), dim: 2, algorithm: Algorithm::New, mu: 1.0, lambda: 1.0, rows }
    }

    #[test]
    fn scientific_format() {
        assert_eq!(format_sci(0.67697123), "6.7697e-01");
        assert_eq!(format_sci(9186.7), "9.1867e+03");
        assert_eq!(format_sci(8.0390e-06), "8.0390e-06");
        assert_eq!(format_sci(1.0), "1.0000e+00");
        assert_eq!(format_sci(1.5e-100), "1.5000e-100");
        assert_eq!(format_order(None), "--");
        assert_eq!(format_order(Some(0.97271)), "0.9727");
    }

    #[test]
    fn single_row_markdown() {
        let text = render_table(&[report(vec![row(8, 0.676971, 0.0710021, None)])], TableFormat::Markdown);
        let lines: Vec<&str> = text.lines().filter(|l| l.starts_with('|')).collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].contains("1/h") && lines[0].contains("energy error"));
        assert!(lines[2].contains("6.7697e-01") && lines[2].contains("7.1002e-02"));
        assert_eq!(lines[2].matches("--").count(), 2);
    }

    #[test]
    fn csv_round_trips_full_precision() {
        let e = [0.6769712345678901, 0.34495000000000003];
        let rep = report(vec![row(8, e[0], 1.0 / 3.0, None), row(16, e[1], 1.0 / 7.0, Some((0.97, 1.97)))]);
        let text = render_table(&[rep], TableFormat::Csv);
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let headers = reader.headers().unwrap().clone();
        let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
        let records: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
        assert_eq!(records.len(), 2);
        for (rec, expected) in records.iter().zip(e) {
            let parsed: f64 = rec[col("energy_error")].parse().unwrap();
            assert!((parsed - expected).abs() <= 1e-15 * expected);
        }
        let l2: f64 = records[0][col("l2_error")].parse().unwrap();
        assert_eq!(l2, 1.0 / 3.0);
        assert_eq!(&records[0][col("energy_order_fmt")], "--");
        assert_eq!(&records[1][col("energy_order_fmt")], "0.9700");
    }

    #[test]
    fn writes_to_file_and_reports_bad_destination() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let rep = [report(vec![row(8, 0.5, 0.1, None)])];
        emit_table(&rep, TableFormat::Csv, Some(&path)).unwrap();
        assert!(std::fs::read_to_string(&path).unwrap().starts_with("case,"));
        let bad = dir.path().join("missing").join("t.csv");
        assert!(matches!(emit_table(&rep, TableFormat::Csv, Some(&bad)), Err(BenchError::Io(_))));
    }

    #[test]
    fn format_parsing() {
        assert_eq!("csv".parse::<TableFormat>().unwrap(), TableFormat::Csv);
        assert_eq!("markdown".parse::<TableFormat>().unwrap(), TableFormat::Markdown);
        assert!("xml".parse::<TableFormat>().is_err());
    }
}
