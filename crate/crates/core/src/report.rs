//! Plot-ready tables: rollout metrics, per-step spectra and run summaries,
//! written as CSV and as JSON with identical content.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::evaluate::{RolloutReport, StepRecord};
use crate::io::{fmt_sig, write_text};

pub const ROLLOUT_COLUMNS: [&str; 5] = ["step", "l2", "rel_l2", "ssim", "eps_high"];
pub const SPECTRUM_COLUMNS: [&str; 4] = ["k", "E_Z_gt", "E_Z_pred", "norm_err"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Cell {
    Int(i64),
    Real(f64),
    Missing,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Real(x) => fmt_sig(*x),
            Cell::Missing => String::new(),
        }
    }

    fn json(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Real(x) if x.is_finite() => fmt_sig(*x),
            Cell::Real(x) => format!("\"{}\"", fmt_sig(*x)),
            Cell::Missing => "null".into(),
        }
    }

    fn parse_csv(s: &str) -> Result<Cell> {
        if s.is_empty() {
            return Ok(Cell::Missing);
        }
        if let Ok(i) = s.parse::<i64>() {
            return Ok(Cell::Int(i));
        }
        s.parse::<f64>().map(Cell::Real).map_err(|_| Error::Parse(format!("bad table cell `{s}`")))
    }

    fn from_json(v: &Value) -> Result<Cell> {
        match v {
            Value::Null => Ok(Cell::Missing),
            Value::Number(n) => match n.as_i64() {
                Some(i) => Ok(Cell::Int(i)),
                None => Ok(Cell::Real(n.as_f64().expect("finite json number"))),
            },
            Value::String(s) => s.parse::<f64>().map(Cell::Real).map_err(|_| Error::Parse(format!("bad table cell `{s}`"))),
            other => Err(Error::Parse(format!("bad table cell {other}"))),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            Cell::Int(i) => Some(i as f64),
            Cell::Real(x) => Some(x),
            Cell::Missing => None,
        }
    }

    /// Equality that treats two NaNs as equal.
    pub fn same(&self, other: &Cell) -> bool {
        match (self, other) {
            (Cell::Real(a), Cell::Real(b)) => a == b || (a.is_nan() && b.is_nan()),
            _ => self == other,
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Real(x)
    }
}

impl From<usize> for Cell {
    fn from(i: usize) -> Self {
        Cell::Int(i as i64)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Missing, Cell::Real)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(columns: &[S]) -> Self {
        Self { columns: columns.iter().map(|c| c.as_ref().to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::InvalidArgument(format!("row has {} cells, table has {} columns", row.len(), self.columns.len())));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<Vec<Cell>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    /// Same columns and cell-wise equal values (NaN matches NaN).
    pub fn same(&self, other: &Table) -> bool {
        self.columns == other.columns
            && self.rows.len() == other.rows.len()
            && self.rows.iter().zip(&other.rows).all(|(a, b)| a.iter().zip(b).all(|(x, y)| x.same(y)))
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::csv).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }

    /// `{"columns": [...], "rows": [[...], ...]}`, one row per line.
    pub fn to_json(&self) -> String {
        let cols: Vec<String> = self.columns.iter().map(|c| Value::String(c.clone()).to_string()).collect();
        let mut s = format!("{{\n  \"columns\": [{}],\n  \"rows\": [", cols.join(", "));
        for (i, row) in self.rows.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(Cell::json).collect();
            let sep = if i + 1 < self.rows.len() { "," } else { "" };
            let _ = write!(s, "\n    [{}]{sep}", cells.join(", "));
        }
        if !self.rows.is_empty() {
            s.push_str("\n  ");
        }
        s.push_str("]\n}\n");
        s
    }

    pub fn from_csv(text: &str) -> Result<Table> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty CSV".into()))?;
        let mut table = Table::new(&header.split(',').collect::<Vec<_>>());
        for line in lines {
            let row = line.split(',').map(Cell::parse_csv).collect::<Result<Vec<_>>>()?;
            table.push(row)?;
        }
        Ok(table)
    }

    pub fn from_json(text: &str) -> Result<Table> {
        let v: Value = serde_json::from_str(text).map_err(|e| Error::Parse(format!("table JSON: {e}")))?;
        let columns = v["columns"]
            .as_array()
            .ok_or_else(|| Error::Parse("table JSON lacks `columns`".into()))?
            .iter()
            .map(|c| c.as_str().map(str::to_string).ok_or_else(|| Error::Parse("column names must be strings".into())))
            .collect::<Result<Vec<_>>>()?;
        let mut table = Table::new(&columns);
        for row in v["rows"].as_array().ok_or_else(|| Error::Parse("table JSON lacks `rows`".into()))? {
            let cells = row.as_array().ok_or_else(|| Error::Parse("table rows must be arrays".into()))?;
            table.push(cells.iter().map(Cell::from_json).collect::<Result<Vec<_>>>()?)?;
        }
        Ok(table)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(Error::Config(format!("unknown format `{s}` (expected csv or json)"))),
        }
    }
}

/// Parse `csv`, `json` or `csv,json`.
pub fn parse_formats(s: &str) -> Result<Vec<Format>> {
    let mut out = Vec::new();
    for f in s.split(',') {
        let f: Format = f.trim().parse()?;
        if !out.contains(&f) {
            out.push(f);
        }
    }
    Ok(out)
}

/// Write `{stem}.csv` and/or `{stem}.json` under `dir`.
pub fn emit_table(table: &Table, dir: &Path, stem: &str, formats: &[Format]) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for f in formats {
        let (path, text) = match f {
            Format::Csv => (dir.join(format!("{stem}.csv")), table.to_csv()),
            Format::Json => (dir.join(format!("{stem}.json")), table.to_json()),
        };
        write_text(&path, &text)?;
        written.push(path);
    }
    Ok(written)
}

pub fn rollout_table(report: &RolloutReport) -> Table {
    let mut t = Table::new(&ROLLOUT_COLUMNS);
    for s in &report.steps {
        t.rows.push(vec![s.step.into(), s.l2.into(), s.rel_l2.into(), s.ssim.into(), s.eps_high.into()]);
    }
    t
}

pub fn spectrum_table(record: &StepRecord) -> Table {
    let mut t = Table::new(&SPECTRUM_COLUMNS);
    for (i, &k) in record.gt_spectrum.k_bins.iter().enumerate() {
        t.rows.push(vec![
            k.into(),
            record.gt_spectrum.density[i].into(),
            record.spectrum.density[i].into(),
            record.spectral_error[i].into(),
        ]);
    }
    t
}

/// Rollout metrics plus one spectrum table per requested step that exists.
pub fn emit_rollout(report: &RolloutReport, dir: &Path, stem: &str, spectrum_steps: &[usize], formats: &[Format]) -> Result<Vec<PathBuf>> {
    let mut written = emit_table(&rollout_table(report), dir, stem, formats)?;
    for &k in spectrum_steps {
        if let Some(rec) = report.step(k) {
            written.extend(emit_table(&spectrum_table(rec), dir, &format!("{stem}_spectrum_step{k:03}"), formats)?);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Table {
        let mut t = Table::new(&["step", "a", "b"]);
        t.push(vec![Cell::Int(1), Cell::Real(0.1), Cell::Missing]).unwrap();
        t.push(vec![Cell::Int(2), Cell::Real(-1.234567891234e-7), Cell::Real(f64::NAN)]).unwrap();
        t.push(vec![Cell::Int(3), Cell::Real(f64::INFINITY), Cell::Real(1e300)]).unwrap();
        t
    }

    #[test]
    fn empty_table_is_header_only() {
        let t = Table::new(&ROLLOUT_COLUMNS);
        assert_eq!(t.to_csv(), "step,l2,rel_l2,ssim,eps_high\n");
        assert!(Table::from_json(&t.to_json()).unwrap().same(&t));
    }

    #[test]
    fn csv_and_json_agree() {
        let t = sample();
        let from_csv = Table::from_csv(&t.to_csv()).unwrap();
        let from_json = Table::from_json(&t.to_json()).unwrap();
        assert!(from_csv.same(&from_json));
        // one round trip quantizes to nine digits; the second is exact
        assert!(Table::from_csv(&from_csv.to_csv()).unwrap().same(&from_csv));
        assert_eq!(from_csv.rows[1][1], Cell::Real(-1.23456789e-7));
    }

    #[test]
    fn nine_significant_digits() {
        let mut t = Table::new(&["x"]);
        t.push(vec![Cell::Real(std::f64::consts::PI)]).unwrap();
        assert_eq!(t.to_csv(), "x\n3.14159265e0\n");
    }

    #[test]
    fn emissions_are_stable() {
        let t = sample();
        assert_eq!(t.to_csv(), sample().to_csv());
        assert_eq!(t.to_json(), sample().to_json());
    }

    #[test]
    fn row_width_checked() {
        let mut t = Table::new(&["a", "b"]);
        assert!(t.push(vec![Cell::Int(1)]).is_err());
    }

    #[test]
    fn formats_parse() {
        assert_eq!(parse_formats("csv,json,csv").unwrap(), vec![Format::Csv, Format::Json]);
        assert!(parse_formats("xml").is_err());
    }
}
