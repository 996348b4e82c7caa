//! Deterministic report documents and CSV tables.

use serde::Serialize;
use serde_json::Value;

use crate::epidemic_model::PRNG_NAME;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub tool: String,
    pub tool_version: String,
    pub prng: String,
    pub seed: Option<u64>,
}

impl Provenance {
    pub fn new(seed: Option<u64>) -> Self {
        Provenance {
            tool: env!("CARGO_PKG_NAME").to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            prng: PRNG_NAME.to_string(),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportDocument {
    pub schema_version: String,
    pub command: String,
    /// SHA-256 of the canonical scenario configuration.
    pub scenario_digest: Option<String>,
    pub results: Value,
    pub provenance: Provenance,
}

/// Header plus rows, the flat view of a report.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: vec![],
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(vec![]);
        w.write_record(&self.header).map_err(|e| Error::Io(e.to_string()))?;
        for r in &self.rows {
            w.write_record(r).map_err(|e| Error::Io(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

/// Number formatting shared by tables: shortest round-trip form, empty for missing.
pub fn cell(x: Option<f64>) -> String {
    match x {
        Some(v) if v.is_finite() => format!("{v}"),
        Some(v) if v > 0.0 => "inf".into(),
        Some(v) if v < 0.0 => "-inf".into(),
        Some(_) => "nan".into(),
        None => String::new(),
    }
}

impl ReportDocument {
    pub fn new(command: &str, digest: Option<String>, results: impl Serialize, seed: Option<u64>) -> Self {
        ReportDocument {
            schema_version: SCHEMA_VERSION.to_string(),
            command: command.to_string(),
            scenario_digest: digest,
            results: serde_json::to_value(results).expect("results serialize"),
            provenance: Provenance::new(seed),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}
