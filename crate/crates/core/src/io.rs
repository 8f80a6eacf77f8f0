//! File input and output helpers shared by the front ends.

use std::path::Path;

use serde::Serialize;

use crate::chain::StochasticMatrix;
use crate::error::{Error, Result};

/// Read a stochastic matrix from JSON (`{"m":..,"rows":[..]}` or a bare array
/// of rows) or from CSV (one row per line, an optional non-numeric header).
pub fn read_matrix(path: &Path) -> Result<StochasticMatrix> {
    let text = std::fs::read_to_string(path)?;
    let is_csv = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        parse_matrix_csv(&text)
    } else {
        parse_matrix_json(&text)
    }
}

pub fn parse_matrix_json(text: &str) -> Result<StochasticMatrix> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("matrix JSON: {e}")))?;
    if value.is_array() {
        let rows: Vec<Vec<f64>> =
            serde_json::from_value(value).map_err(|e| Error::Config(format!("matrix rows: {e}")))?;
        StochasticMatrix::from_rows(rows)
    } else {
        serde_json::from_value(value).map_err(|e| Error::Config(format!("matrix object: {e}")))
    }
}

pub fn parse_matrix_csv(text: &str) -> Result<StochasticMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if line == 0 => continue,
            Err(e) => return Err(Error::Config(format!("matrix CSV line {}: {e}", line + 1))),
        }
    }
    StochasticMatrix::from_rows(rows)
}

/// Pretty JSON with a trailing newline.
pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_json_pretty(value)?)?;
    Ok(())
}
