//! One-component-at-a-time variants of the base experiment, all on identical data.

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Method};
use super::experiment::{load_trial_data, run_trial, MetricsReport};
use crate::error::{Error, Result};
use crate::prior::PriorMode;

/// A named modification of the base configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arm", rename_all = "snake_case")]
pub enum AblationArm {
    WithoutSlack,
    UniformRegularization,
    WithoutRegularization,
    WithoutConstraints,
    WithoutDataConsistency,
    WithoutDropout,
    SlackPenalty { c: f64 },
    ClusterFeatures { k: usize },
}

impl AblationArm {
    /// The thirteen arms in report order.
    pub fn all() -> Vec<Self> {
        let mut arms = vec![
            Self::WithoutSlack,
            Self::UniformRegularization,
            Self::WithoutRegularization,
            Self::WithoutConstraints,
            Self::WithoutDataConsistency,
            Self::WithoutDropout,
        ];
        arms.extend([0.1, 1.0, 10.0, 100.0].map(|c| Self::SlackPenalty { c }));
        arms.extend([10, 100, 200].map(|k| Self::ClusterFeatures { k }));
        arms
    }

    pub fn name(&self) -> String {
        match self {
            Self::WithoutSlack => "without_slack".into(),
            Self::UniformRegularization => "uniform_regularization".into(),
            Self::WithoutRegularization => "without_regularization".into(),
            Self::WithoutConstraints => "without_constraints".into(),
            Self::WithoutDataConsistency => "without_data_consistency".into(),
            Self::WithoutDropout => "without_dropout".into(),
            Self::SlackPenalty { c } => format!("slack_penalty_{c}"),
            Self::ClusterFeatures { k } => format!("cluster_features_{k}"),
        }
    }

    /// The base configuration with this arm's single change applied.
    pub fn apply(&self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut c = base.clone();
        match *self {
            Self::WithoutSlack => c.solver.use_slack = false,
            Self::UniformRegularization => c.solver.prior_mode = PriorMode::Uniform,
            Self::WithoutRegularization => c.solver.prior_mode = PriorMode::None,
            Self::WithoutConstraints => c.solver.use_constraints = false,
            Self::WithoutDataConsistency => c.method = Method::Direct,
            Self::WithoutDropout => c.label_model.dropout_rate = 0.0,
            Self::SlackPenalty { c: penalty } => c.solver.slack_penalty = penalty,
            Self::ClusterFeatures { k } => c.cluster_k = Some(k),
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub arm: AblationArm,
    pub report: MetricsReport,
}

/// Run every arm. Each trial's data is loaded once and shared by all arms.
pub fn run_ablation(base: &ExperimentConfig) -> Result<Vec<AblationRow>> {
    base.validate()?;
    let arms = AblationArm::all();
    let configs: Vec<ExperimentConfig> = arms.iter().map(|a| a.apply(base)).collect();
    for c in &configs {
        c.validate()?;
    }
    let mut per_arm: Vec<Vec<_>> = vec![Vec::with_capacity(base.trials); arms.len()];
    for t in 0..base.trials {
        let data = load_trial_data(base, t)?;
        for (config, trials) in configs.iter().zip(&mut per_arm) {
            let metrics = run_trial(config, &data, t)?;
            if metrics.data_fingerprint != data.fingerprint {
                return Err(Error::invalid("ablation arm saw different data"));
            }
            trials.push(metrics);
        }
    }
    Ok(arms
        .into_iter()
        .zip(per_arm)
        .map(|(arm, trials)| AblationRow {
            arm,
            report: MetricsReport::from_trials(trials),
        })
        .collect())
}
