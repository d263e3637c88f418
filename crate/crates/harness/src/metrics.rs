//! Persisted experiment records.
//!
//! `metrics.jsonl` holds one deterministic record per (method, seed, epoch).
//! Wall-clock measurements go to `timing.jsonl` so the metrics and summary
//! files are byte-identical across reruns of the same configuration.

use crate::HarnessError;
use manip_core::trainer::ManipSummary;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const TIMING_FILE: &str = "timing.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsRecord {
    pub run_id: String,
    pub method: String,
    pub seed: u64,
    /// 1-based epoch.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    /// Test accuracy of the parameters at this epoch.
    pub test_accuracy: f64,
    /// Test accuracy of the best-validation checkpoint up to this epoch;
    /// at the final epoch this is the run's reported accuracy.
    pub selected_test_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manip: Option<ManipStats>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ManipStats {
    Weight { mean: f64, std: f64, min: f64, max: f64 },
    Augment { mean_abs: f64, max_abs: f64 },
}

impl ManipStats {
    pub fn from_summary(s: &ManipSummary) -> Option<Self> {
        match s {
            ManipSummary::None => None,
            ManipSummary::Weight { mean, std, min, max } => Some(ManipStats::Weight {
                mean: *mean,
                std: *std,
                min: *min,
                max: *max,
            }),
            ManipSummary::Augment { mean_abs, max_abs } => Some(ManipStats::Augment {
                mean_abs: *mean_abs,
                max_abs: *max_abs,
            }),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingRecord {
    pub method: String,
    pub seed: u64,
    pub epoch: usize,
    pub wall_ms: f64,
}

/// Per-method aggregate over seeds. The accuracy fields are absent when
/// every seed of the method failed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodSummary {
    pub name: String,
    pub n_seeds: usize,
    pub failed_seeds: Vec<u64>,
    /// Mean over seeds of the selected-checkpoint test accuracy.
    pub mean_test_accuracy: Option<f64>,
    /// Sample standard deviation (n-1 denominator) of the same.
    pub std_test_accuracy: Option<f64>,
    pub mean_selected_epoch: Option<f64>,
}

/// One structured document per run directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub run_id: String,
    pub dataset: String,
    pub setting: String,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub test_per_class: usize,
    pub methods: Vec<MethodSummary>,
}

/// Mean and sample standard deviation (n-1; zero when n < 2, absent when
/// there is nothing to aggregate).
pub fn mean_std_opt(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let (m, s) = mean_std(values);
    (Some(m), Some(s))
}

/// Mean and sample standard deviation (n-1; zero when n < 2).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), HarnessError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| HarnessError::Format(e.to_string()))?;
        writeln!(f, "{line}")?;
    }
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>, HarnessError> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| {
            HarnessError::Format(format!("{}:{}: {e}", path.display(), i + 1))
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_summary(path: &Path, summary: &Summary) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(summary)
        .map_err(|e| HarnessError::Format(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<Summary, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| HarnessError::Format(format!("{}: {e}", path.display())))
}
