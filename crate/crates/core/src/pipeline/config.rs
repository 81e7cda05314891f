//! Experiment configuration and its flat `key = value` file format.
//!
//! Files are TOML with top-level keys only. Every key names a field of exactly one
//! of the nested groups below, so a file never needs sections:
//!
//! ```toml
//! trials = 3
//! seed = 7
//! slack_penalty = 1.0
//! n_train = 8000
//! end_model_epochs = 50
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Architecture, LabelModelSpec, OutputHead};
use crate::solver::SolverConfig;
use crate::synth::SyntheticSpec;

/// Where constraint error bounds come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundsSource {
    /// All bounds 0; slack absorbs the infeasibility.
    #[default]
    Zero,
    /// One bound per line in `bounds_file`.
    File,
    /// Empirical signal errors on a labeled slice of the fit examples.
    Validation,
}

/// How training labels are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Label model trained under the constraints.
    #[default]
    Dcws,
    /// Constraints solved for the labels directly, ignoring features.
    Direct,
    /// The majority-vote prior itself.
    MajorityVote,
}

/// Label-model shape; the output head and width follow from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelModelSettings {
    pub architecture: Architecture,
    pub hidden_units: usize,
    pub dropout_rate: f64,
}

impl Default for LabelModelSettings {
    fn default() -> Self {
        Self {
            architecture: Architecture::TwoLayer,
            hidden_units: LabelModelSpec::DEFAULT_HIDDEN_UNITS,
            dropout_rate: LabelModelSpec::DEFAULT_DROPOUT,
        }
    }
}

impl LabelModelSettings {
    pub fn to_spec(&self, n_columns: usize) -> LabelModelSpec {
        LabelModelSpec {
            architecture: self.architecture,
            hidden_units: self.hidden_units,
            dropout_rate: self.dropout_rate,
            output_head: OutputHead::for_columns(n_columns),
            n_outputs: n_columns,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndModelLoss {
    #[default]
    SquaredError,
    CrossEntropy,
}

/// The downstream classifier: two equal ReLU hidden layers, full-batch Adam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndModelConfig {
    #[serde(rename = "end_model_hidden_units")]
    pub hidden_units: usize,
    #[serde(rename = "end_model_epochs")]
    pub epochs: usize,
    #[serde(rename = "end_model_lr")]
    pub lr: f64,
    #[serde(rename = "end_model_loss")]
    pub loss: EndModelLoss,
}

impl Default for EndModelConfig {
    fn default() -> Self {
        Self {
            hidden_units: 512,
            epochs: 200,
            lr: 1e-3,
            loss: EndModelLoss::SquaredError,
        }
    }
}

impl EndModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_units == 0 || self.epochs == 0 {
            return Err(Error::invalid("end model needs hidden_units > 0 and epochs > 0"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("end_model_lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub trials: usize,
    /// Master seed; trial `t` uses `seed + t` for data, solver and end model.
    pub seed: u64,
    pub method: Method,
    /// Fit on every training example rather than only the covered ones.
    pub dcws_plus: bool,
    pub bounds: BoundsSource,
    pub bounds_file: Option<PathBuf>,
    /// Share of the fit examples whose truth is revealed for [`BoundsSource::Validation`].
    pub validation_fraction: f64,
    /// Replace the label model's input with one-hot k-means cluster labels.
    pub cluster_k: Option<usize>,
    pub train_end_model: bool,
    /// For DCWS+, train the end model on covered examples only.
    pub end_model_covered_only: bool,
    /// Training features; when absent the synthetic generator supplies the data.
    pub features: Option<PathBuf>,
    pub signals: Option<PathBuf>,
    pub meta: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub test_features: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub solver: SolverConfig,
    pub label_model: LabelModelSettings,
    pub end_model: EndModelConfig,
    pub synthetic: SyntheticSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            trials: 3,
            seed: 0,
            method: Method::Dcws,
            dcws_plus: false,
            bounds: BoundsSource::Zero,
            bounds_file: None,
            validation_fraction: 0.1,
            cluster_k: None,
            train_end_model: true,
            end_model_covered_only: false,
            features: None,
            signals: None,
            meta: None,
            labels: None,
            test_features: None,
            test_labels: None,
            solver: SolverConfig::default(),
            label_model: LabelModelSettings::default(),
            end_model: EndModelConfig::default(),
            synthetic: SyntheticSpec::default(),
        }
    }
}

/// Nested groups, in routing priority order. Top-level fields come first.
const GROUPS: [&str; 4] = ["label_model", "end_model", "solver", "synthetic"];

fn field_names<T: Serialize + Default>() -> BTreeSet<String> {
    // JSON keeps `None` fields as null, so every field name shows up
    match serde_json::to_value(T::default()).expect("defaults serialize") {
        serde_json::Value::Object(map) => map.keys().cloned().collect(),
        _ => unreachable!("config groups are structs"),
    }
}

fn group_fields(group: &str) -> BTreeSet<String> {
    match group {
        "label_model" => field_names::<LabelModelSettings>(),
        "end_model" => field_names::<EndModelConfig>(),
        "solver" => field_names::<SolverConfig>(),
        "synthetic" => field_names::<SyntheticSpec>(),
        _ => unreachable!("unknown group {group}"),
    }
}

fn top_level_fields() -> BTreeSet<String> {
    let mut keys = field_names::<ExperimentConfig>();
    for g in GROUPS {
        keys.remove(g);
    }
    keys
}

/// Sort flat keys into `groups` (first match wins); `top` keys stay at the root.
fn nest(flat: toml::Table, top: &BTreeSet<String>, groups: &[&str]) -> Result<toml::Table> {
    let fields: Vec<(&str, BTreeSet<String>)> = groups.iter().map(|&g| (g, group_fields(g))).collect();
    let mut nested = toml::Table::new();
    for (key, value) in flat {
        if value.is_table() {
            return Err(Error::invalid(format!("`{key}`: config files are flat, sections are not allowed")));
        }
        if top.contains(&key) {
            nested.insert(key, value);
            continue;
        }
        let Some((group, _)) = fields.iter().find(|(_, f)| f.contains(&key)) else {
            return Err(Error::invalid(format!("unknown config key `{key}`")));
        };
        nested
            .entry(group.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .expect("group entries are tables")
            .insert(key, value);
    }
    Ok(nested)
}

fn parse_flat<T: DeserializeOwned>(text: &str, top: &BTreeSet<String>, groups: &[&str]) -> Result<T> {
    let flat: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::invalid(e.message().to_string()))?;
    let nested = nest(flat, top, groups)?;
    nested
        .try_into()
        .map_err(|e: toml::de::Error| Error::invalid(e.message().to_string()))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

impl ExperimentConfig {
    pub fn from_flat_toml(text: &str) -> Result<Self> {
        let config: Self = parse_flat(text, &top_level_fields(), &GROUPS)?;
        config.validate()?;
        Ok(config)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_flat_toml(&read_text(path)?).map_err(|e| Error::parse(path, e.to_string()))
    }

    /// Inverse of [`ExperimentConfig::from_flat_toml`].
    pub fn to_flat_toml(&self) -> String {
        let nested = toml::Table::try_from(self).expect("config serializes");
        let mut flat = toml::Table::new();
        for (key, value) in nested {
            match value {
                toml::Value::Table(group) if GROUPS.contains(&key.as_str()) => flat.extend(group),
                other => {
                    flat.insert(key, other);
                }
            }
        }
        toml::to_string(&flat).expect("flat table serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::invalid("trials must be at least 1"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "validation_fraction {} must lie in (0, 1]",
                self.validation_fraction
            )));
        }
        if self.bounds == BoundsSource::File && self.bounds_file.is_none() {
            return Err(Error::invalid("bounds = \"file\" needs bounds_file"));
        }
        if self.cluster_k == Some(0) {
            return Err(Error::invalid("cluster_k must be at least 1"));
        }
        if self.features.is_some() && (self.signals.is_none() || self.meta.is_none() || self.labels.is_none()) {
            return Err(Error::invalid("file data needs features, signals, meta and labels"));
        }
        if self.test_features.is_some() != self.test_labels.is_some() {
            return Err(Error::invalid("test_features and test_labels go together"));
        }
        self.solver.validate()?;
        self.label_model.to_spec(1).validate()?;
        self.end_model.validate()?;
        if self.features.is_none() {
            self.synthetic.validate()?;
        }
        Ok(())
    }

    /// Data, solver and end-model seed of trial `trial`.
    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.seed.wrapping_add(trial as u64)
    }
}

/// Settings accepted by a single `fit`: solver and label-model keys.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub solver: SolverConfig,
    pub label_model: LabelModelSettings,
}

impl FitConfig {
    pub fn from_flat_toml(text: &str) -> Result<Self> {
        let config: Self = parse_flat(text, &BTreeSet::new(), &["label_model", "solver"])?;
        config.solver.validate()?;
        config.label_model.to_spec(1).validate()?;
        Ok(config)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_flat_toml(&read_text(path)?).map_err(|e| Error::parse(path, e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::PriorMode;

    #[test]
    fn flat_keys_reach_their_groups() {
        let text = r#"
            trials = 1
            seed = 9
            method = "direct"
            slack_penalty = 0.5
            prior_mode = "uniform"
            hidden_units = 16
            end_model_epochs = 5
            n_train = 100
            error_range = [0.3, 0.4]
            cluster_k = 10
        "#;
        let c = ExperimentConfig::from_flat_toml(text).unwrap();
        assert_eq!(c.trials, 1);
        assert_eq!(c.seed, 9);
        assert_eq!(c.method, Method::Direct);
        assert_eq!(c.solver.slack_penalty, 0.5);
        assert_eq!(c.solver.prior_mode, PriorMode::Uniform);
        assert_eq!(c.label_model.hidden_units, 16);
        assert_eq!(c.end_model.epochs, 5);
        assert_eq!(c.synthetic.n_train, 100);
        assert_eq!(c.synthetic.error_range, [0.3, 0.4]);
        assert_eq!(c.cluster_k, Some(10));
    }

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(ExperimentConfig::from_flat_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_and_sections_are_rejected() {
        let err = ExperimentConfig::from_flat_toml("slack_penality = 1.0").unwrap_err();
        assert!(err.to_string().contains("slack_penality"));
        assert!(ExperimentConfig::from_flat_toml("[solver]\nslack_penalty = 1.0").is_err());
        assert!(ExperimentConfig::from_flat_toml("trials = 0").is_err());
        assert!(FitConfig::from_flat_toml("trials = 2").is_err());
    }

    #[test]
    fn flat_round_trip() {
        let mut c = ExperimentConfig { trials: 2, ..Default::default() };
        c.solver.use_slack = false;
        c.end_model.loss = EndModelLoss::CrossEntropy;
        c.bounds = BoundsSource::Validation;
        let text = c.to_flat_toml();
        assert!(!text.contains("[solver]"));
        assert_eq!(ExperimentConfig::from_flat_toml(&text).unwrap(), c);
    }

    #[test]
    fn fit_config_seed_goes_to_solver() {
        let c = FitConfig::from_flat_toml("seed = 4\nlr_theta = 0.002\ndropout_rate = 0.0").unwrap();
        assert_eq!(c.solver.seed, 4);
        assert_eq!(c.solver.lr_theta, 0.002);
        assert_eq!(c.label_model.dropout_rate, 0.0);
    }
}
