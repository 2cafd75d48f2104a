//! `report.json` and `report.csv` for cross-validation runs.

use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::harness::{CvOutcome, Summary};

/// Rounds every float in a JSON tree to 6 decimals.
pub fn round_json(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap();
            if let Some(r) = serde_json::Number::from_f64((x * 1e6).round() / 1e6) {
                *n = r;
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_json),
        Value::Object(o) => o.values_mut().for_each(round_json),
        _ => {}
    }
}

#[derive(Serialize)]
struct FoldRow {
    fold: usize,
    n_test: u64,
    best_epoch: usize,
    best_val_accuracy: f64,
    accuracy: f64,
    precision: f64,
    recall: f64,
    f_score: f64,
    zero_division: bool,
    confusion: [[u64; 3]; 3],
}

#[derive(Serialize)]
struct Aggregate<'a> {
    /// Statistics are over folds.
    std_over: &'static str,
    mean: &'a Summary,
    std: &'a Summary,
}

/// Run identifier: first 12 hex digits of SHA-256 over the config echo and
/// the dataset digest.
pub fn run_id(config: &Value, data_digest: &str) -> String {
    let mut h = Sha256::new();
    h.update(config.to_string().as_bytes());
    h.update(data_digest.as_bytes());
    h.finalize().iter().take(6).map(|b| format!("{b:02x}")).collect()
}

/// Builds the JSON report. `config` must echo every effective parameter.
pub fn build_report(outcome: &CvOutcome, config: &Value, seed: u64, data_digest: &str) -> Value {
    let folds: Vec<FoldRow> = outcome
        .folds
        .iter()
        .map(|f| FoldRow {
            fold: f.fold,
            n_test: f.metrics.n,
            best_epoch: f.best_epoch,
            best_val_accuracy: f.best_val_accuracy,
            accuracy: f.metrics.accuracy,
            precision: f.metrics.precision,
            recall: f.metrics.recall,
            f_score: f.metrics.f_score,
            zero_division: f.metrics.zero_division,
            confusion: f.metrics.confusion,
        })
        .collect();
    let mut v = serde_json::json!({
        "run_id": run_id(config, data_digest),
        "seed": seed,
        "data_digest": data_digest,
        "config": config,
        "folds": folds,
        "aggregate": Aggregate {
            std_over: "folds",
            mean: &outcome.report.mean,
            std: &outcome.report.std,
        },
    });
    round_json(&mut v);
    v
}

pub fn report_csv(outcome: &CvOutcome) -> String {
    let mut s = String::from("fold,n_test,best_epoch,accuracy,precision,recall,f_score\n");
    for f in &outcome.folds {
        let m = &f.metrics;
        s.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6}\n",
            f.fold, m.n, f.best_epoch, m.accuracy, m.precision, m.recall, m.f_score
        ));
    }
    s
}

pub fn write_reports(dir: &Path, outcome: &CvOutcome, report: &Value) -> Result<()> {
    let json = serde_json::to_string_pretty(report)? + "\n";
    let jp = dir.join("report.json");
    std::fs::write(&jp, json).map_err(|e| Error::io(&jp, e))?;
    let cp = dir.join("report.csv");
    std::fs::write(&cp, report_csv(outcome)).map_err(|e| Error::io(&cp, e))
}

/// SHA-256 hex digest of arbitrary bytes.
pub fn digest_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
