//! Result persistence: JSON reports with a reproducibility header and
//! long-format CSV plot tables.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;

use crate::config::ExperimentConfig;
use crate::error::{LabError, Result};

/// Field excluded when comparing reports for reproducibility.
pub const TIMESTAMP_FIELD: &str = "timestamp";

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    /// The configuration after flags and defaults were applied.
    pub config: ExperimentConfig,
    pub converged: bool,
    pub result: Value,
}

impl Report {
    pub fn new(config: ExperimentConfig, converged: bool, result: Value) -> Self {
        let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        Report {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: config.command.map(|c| c.name()).unwrap_or(""),
            seed: config.seed.unwrap_or(0),
            timestamp,
            config,
            converged,
            result,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| LabError::Encode(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }
}

/// Drops the timestamp so two reports can be compared directly.
pub fn without_timestamp(mut report: Value) -> Value {
    if let Some(obj) = report.as_object_mut() {
        obj.remove(TIMESTAMP_FIELD);
    }
    report
}

/// A tidy table: fixed column order, one observation per row.
#[derive(Clone, Debug, PartialEq)]
pub struct PlotTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl PlotTable {
    pub fn new(columns: &[&str]) -> Self {
        PlotTable { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Writes the table (header only when empty).
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        w.write_record(&self.columns).map_err(|e| csv_error(path, e))?;
        for row in &self.rows {
            w.write_record(row).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| LabError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let columns = r.headers().map_err(|e| csv_error(path, e))?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            rows.push(rec.map_err(|e| csv_error(path, e))?.iter().map(str::to_string).collect());
        }
        Ok(PlotTable { columns, rows })
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn num(x: f64) -> String {
    format!("{x}")
}

/// Empty cell for a missing value.
pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn csv_error(path: &Path, e: csv::Error) -> LabError {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => LabError::io(path, source),
        other => LabError::Encode(format!("{}: {other:?}", path.display())),
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| LabError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut t = PlotTable::new(&["n", "rate_normalized", "prediction", "stderr"]);
        t.push(vec![num(4096.0), num(-0.1234567890123), opt(None), num(1e-300)]);
        t.push(vec![num(65536.0), num(f64::MIN_POSITIVE), opt(Some(-std::f64::consts::FRAC_PI_4)), num(0.1 + 0.2)]);
        t.write(&path).unwrap();
        let back = PlotTable::read(&path).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.rows[1][3].parse::<f64>().unwrap(), 0.1 + 0.2);
    }

    #[test]
    fn empty_table_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        PlotTable::new(&["R", "delta", "bc", "value"]).write(&path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "R,delta,bc,value\n");
    }

    #[test]
    fn timestamp_is_dropped() {
        let v = serde_json::json!({"timestamp": 5, "seed": 1});
        assert_eq!(without_timestamp(v), serde_json::json!({"seed": 1}));
    }
}
