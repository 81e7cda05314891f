//! JSON metrics documents. Wall-clock time is left out so reruns are byte-identical.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ablation::AblationRow;
use super::config::ExperimentConfig;
use super::experiment::{MetricsReport, TrialMetrics};
use crate::error::{Error, Result};

/// Version string stamped into every metrics file.
pub fn version_string() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDocument {
    pub version: String,
    pub label_accuracy_mean: f64,
    pub label_accuracy_std: f64,
    pub test_accuracy_mean: Option<f64>,
    pub test_accuracy_std: Option<f64>,
    pub f1_mean: f64,
    pub f1_std: f64,
    pub trials: usize,
    pub per_trial: Vec<TrialMetrics>,
    pub config: ExperimentConfig,
}

impl MetricsDocument {
    pub fn new(report: &MetricsReport, config: &ExperimentConfig) -> Self {
        Self {
            version: version_string(),
            label_accuracy_mean: report.label_accuracy.mean,
            label_accuracy_std: report.label_accuracy.std,
            test_accuracy_mean: report.test_accuracy.map(|s| s.mean),
            test_accuracy_std: report.test_accuracy.map(|s| s.std),
            f1_mean: report.f1.mean,
            f1_std: report.f1.std,
            trials: report.per_trial.len(),
            per_trial: report.per_trial.clone(),
            config: config.clone(),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
    }
}

fn write_json<S: Serialize>(value: &S, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Write `report` (with the config that produced it) as JSON.
pub fn emit_metrics(report: &MetricsReport, config: &ExperimentConfig, path: &Path) -> Result<()> {
    write_json(&MetricsDocument::new(report, config), path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationArmDocument {
    pub arm: String,
    pub metrics: MetricsDocument,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationDocument {
    pub version: String,
    pub arms: Vec<AblationArmDocument>,
}

/// One metrics document per arm, each echoing that arm's configuration.
pub fn emit_ablation(rows: &[AblationRow], base: &ExperimentConfig, path: &Path) -> Result<()> {
    let doc = AblationDocument {
        version: version_string(),
        arms: rows
            .iter()
            .map(|r| AblationArmDocument {
                arm: r.arm.name(),
                metrics: MetricsDocument::new(&r.report, &r.arm.apply(base)),
            })
            .collect(),
    };
    write_json(&doc, path)
}
