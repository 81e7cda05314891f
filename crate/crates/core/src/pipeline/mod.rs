//! Experiment orchestration: the two-stage protocol, trials, ablations and metrics files.

mod ablation;
mod config;
mod end_model;
mod experiment;
mod report;

pub use ablation::{run_ablation, AblationArm, AblationRow};
pub use config::{BoundsSource, EndModelConfig, EndModelLoss, ExperimentConfig, FitConfig, LabelModelSettings, Method};
pub use end_model::train_end_model;
pub use experiment::{run_experiment, MetricsReport, Summary, TrialMetrics};
pub use report::{
    emit_ablation, emit_metrics, version_string, AblationArmDocument, AblationDocument, MetricsDocument,
};
