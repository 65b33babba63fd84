//! Run outcomes, the JSON report and the long-format metrics table.

use std::fs;
use std::path::Path;

use bimlab::stats::Estimate;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

/// One scalar result. `label` distinguishes rows of the same metric, for
/// example the value of `d` or the index of a start point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metric {
    pub name: String,
    pub label: String,
    pub value: f64,
    pub stderr: Option<f64>,
    pub samples: Option<u64>,
}

/// A pass/fail criterion evaluated by the experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// What an experiment returns: metrics, checks and free-form details.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Outcome {
    pub metrics: Vec<Metric>,
    pub checks: Vec<Check>,
    pub details: Value,
}

impl Outcome {
    pub fn metric(&mut self, name: &str, label: impl ToString, value: f64) {
        self.metrics.push(Metric {
            name: name.into(),
            label: label.to_string(),
            value,
            stderr: None,
            samples: None,
        });
    }

    pub fn estimate(&mut self, name: &str, label: impl ToString, e: &Estimate) {
        self.metrics.push(Metric {
            name: name.into(),
            label: label.to_string(),
            value: e.mean,
            stderr: Some(e.stderr),
            samples: Some(e.samples),
        });
    }

    pub fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Everything written to `report.json`.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub experiment: String,
    pub seed: u64,
    pub param_hash: String,
    pub workers: usize,
    pub config: Value,
    pub rng: RngInfo,
    pub passed: bool,
    pub metrics: Vec<Metric>,
    pub checks: Vec<Check>,
    pub details: Value,
    pub wall_clock_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RngInfo {
    pub generator: &'static str,
    pub master_seed: u64,
    pub derivation: &'static str,
}

impl RngInfo {
    pub fn new(seed: u64) -> Self {
        Self {
            generator: "ChaCha8",
            master_seed: seed,
            derivation: "stream ids derived by splitmix hashing of sample indices and labels",
        }
    }
}

/// Hex SHA-256 prefix of the canonical JSON of `value` (object keys sorted).
pub fn param_hash(value: &Value) -> String {
    let canonical = serde_json::to_string(value).expect("JSON values serialize");
    let digest = Sha256::digest(canonical.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Float with 17 significant digits, enough to round-trip any `f64`.
pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub const CSV_HEADER: [&str; 8] = [
    "experiment",
    "seed",
    "param_hash",
    "metric",
    "label",
    "value",
    "stderr",
    "samples",
];

/// Long-format CSV, one row per metric.
pub fn metrics_csv(report: &Report) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for m in &report.metrics {
        w.write_record([
            report.experiment.clone(),
            report.seed.to_string(),
            report.param_hash.clone(),
            m.name.clone(),
            m.label.clone(),
            format_float(m.value),
            m.stderr.map(format_float).unwrap_or_default(),
            m.samples.map(|s| s.to_string()).unwrap_or_default(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("CSV of UTF-8 fields"))
}

/// Writes `report.json` and `metrics.csv` into `dir`.
pub fn write_outputs(dir: &Path, report: &Report) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(report).map_err(std::io::Error::other)?;
    fs::write(dir.join("report.json"), json + "\n")?;
    let csv = metrics_csv(report).map_err(std::io::Error::other)?;
    fs::write(dir.join("metrics.csv"), csv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, 1e-300, 6.02214076e23, -2.5, f64::MIN_POSITIVE] {
            let s = format_float(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
        assert_eq!(format_float(f64::INFINITY), "inf");
    }

    #[test]
    fn hash_ignores_key_order() {
        let a: Value = serde_json::from_str(r#"{"a": 1, "b": [1, 2]}"#).unwrap();
        let b: Value = serde_json::from_str(r#"{"b": [1, 2], "a": 1}"#).unwrap();
        assert_eq!(param_hash(&a), param_hash(&b));
        let c: Value = serde_json::from_str(r#"{"a": 2, "b": [1, 2]}"#).unwrap();
        assert_ne!(param_hash(&a), param_hash(&c));
    }

    #[test]
    fn csv_quotes_fields() {
        let mut o = Outcome::default();
        o.metric("x", "a,\"b\"", 0.5);
        let r = Report {
            experiment: "e".into(),
            seed: 3,
            param_hash: "h".into(),
            workers: 1,
            config: Value::Null,
            rng: RngInfo::new(3),
            passed: true,
            metrics: o.metrics,
            checks: vec![],
            details: Value::Null,
            wall_clock_seconds: 0.0,
        };
        let s = metrics_csv(&r).unwrap();
        let mut rd = csv::Reader::from_reader(s.as_bytes());
        let row = rd.records().next().unwrap().unwrap();
        assert_eq!(&row[4], "a,\"b\"");
        assert_eq!(row[5].parse::<f64>().unwrap(), 0.5);
        assert_eq!(&row[6], "");
    }
}
