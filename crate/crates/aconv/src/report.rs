//! Report emission: deterministic CSV files, content hashing for manifests,
//! and converters from experiment reports to CSV rows.
//!
//! Floats are rendered with Rust's shortest-roundtrip `Display`, so a value
//! prints identically everywhere and parses back to the same bits. Files are
//! written in one pass with `\n` line endings; byte-identical inputs produce
//! byte-identical files.

use sha2::{Digest, Sha256};
use std::fs;
use std::path::Path;

use crate::error::{AconvError, Result};
use crate::train::ExperimentReport;

/// Shortest-roundtrip decimal rendering of a float.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Writes a CSV file with a mandatory header row. Every row must have
/// exactly as many fields as the header.
pub fn write_csv(path: impl AsRef<Path>, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    for (i, row) in rows.iter().enumerate() {
        if row.len() != header.len() {
            return Err(AconvError::InvalidArgument(format!(
                "csv row {i} has {} fields but the header has {}",
                row.len(),
                header.len()
            )));
        }
    }
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path.as_ref(), out.as_bytes())?;
    Ok(())
}

/// SHA-256 over length-framed parts, rendered as `sha256:<hex>`. Each part
/// is prefixed by its byte length (little-endian u64), so part boundaries
/// are part of the digest.
pub fn content_hash<T: AsRef<[u8]>>(parts: &[T]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        let bytes = part.as_ref();
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(bytes);
    }
    format!("sha256:{:x}", hasher.finalize())
}

/// Writes a JSON manifest with sorted keys and a trailing newline.
pub fn write_manifest(path: impl AsRef<Path>, manifest: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)
        .map_err(|e| AconvError::InvalidArgument(format!("manifest not serializable: {e}")))?;
    text.push('\n');
    fs::write(path.as_ref(), text.as_bytes())?;
    Ok(())
}

/// Header for the per-epoch CSV of an experiment report: fixed columns, then
/// one `mean_sigma_<layer>` column per adaptive layer.
pub fn experiment_csv_header(report: &ExperimentReport) -> Vec<String> {
    let mut header = vec![
        "repeat".to_string(),
        "epoch".to_string(),
        "train_loss".to_string(),
        "val_acc".to_string(),
        "val_loss".to_string(),
        "lr".to_string(),
    ];
    for name in &report.sigma_layer_names {
        header.push(format!("mean_sigma_{name}"));
    }
    header
}

/// One CSV row per completed epoch per repeat, matching
/// [`experiment_csv_header`].
pub fn experiment_csv_rows(report: &ExperimentReport) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for rep in &report.repeats {
        for e in &rep.epochs {
            let mut row = vec![
                rep.repeat.to_string(),
                e.epoch.to_string(),
                fmt_f64(e.train_loss),
                fmt_f64(e.val_acc),
                fmt_f64(e.val_loss),
                fmt_f64(e.lr),
            ];
            for &s in &e.mean_sigmas {
                row.push(fmt_f64(s));
            }
            rows.push(row);
        }
    }
    rows
}

/// Header for the per-filter aperture trajectory CSV.
pub const SIGMA_CSV_HEADER: [&str; 5] = ["repeat", "epoch", "layer", "filter", "sigma"];

/// One CSV row per aperture sample, matching [`SIGMA_CSV_HEADER`].
pub fn sigma_csv_rows(report: &ExperimentReport) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for rep in &report.repeats {
        for s in &rep.sigma_trajectory {
            rows.push(vec![
                rep.repeat.to_string(),
                s.epoch.to_string(),
                s.layer.clone(),
                s.filter.to_string(),
                fmt_f64(s.sigma),
            ]);
        }
    }
    rows
}

/// Header for the per-repeat summary CSV.
pub const SUMMARY_CSV_HEADER: [&str; 3] = ["repeat", "best_acc", "aborted"];

/// One CSV row per repeat: peak accuracy and the abort diagnostic (empty
/// when the repeat ran to completion). Timing is deliberately excluded; it
/// lives in its own CSV so these rows stay run-to-run identical.
pub fn summary_csv_rows(report: &ExperimentReport) -> Vec<Vec<String>> {
    report
        .repeats
        .iter()
        .map(|rep| {
            vec![
                rep.repeat.to_string(),
                fmt_f64(rep.best_acc),
                rep.aborted.clone().unwrap_or_default(),
            ]
        })
        .collect()
}

/// Header for the per-repeat timing CSV (wall-clock data; never covered by
/// determinism checks).
pub const TIMING_CSV_HEADER: [&str; 2] = ["repeat", "step_time_ms"];

/// One CSV row per repeat with its mean per-step wall time.
pub fn timing_csv_rows(report: &ExperimentReport) -> Vec<Vec<String>> {
    report
        .repeats
        .iter()
        .map(|rep| vec![rep.repeat.to_string(), fmt_f64(rep.step_time_ms)])
        .collect()
}
