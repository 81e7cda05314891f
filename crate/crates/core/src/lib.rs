//! Data consistent weak supervision.
//!
//! Noisy, possibly abstaining weak signals are turned into linear error-bound
//! constraints on the labels; a parametric label model of the features is then
//! trained so its predictions satisfy those constraints (with slack) while
//! staying close to a prior labeling. The trained model's predictions are the
//! synthesized soft training labels.
//!
//! All numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the crate root fix the scalar to `f64`.

pub mod constraints;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod kmeans;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod prior;
pub mod scalar;
pub mod solver;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type FeatureMatrix = data::FeatureMatrix<f64>;
pub type WeakSignalSet = data::WeakSignalSet<f64>;
pub type SoftLabelMatrix = data::SoftLabelMatrix<f64>;
pub type BoundVector = constraints::BoundVector<f64>;
pub type ConstraintSystem = constraints::ConstraintSystem<f64>;
pub type LabelModelParams = model::LabelModelParams<f64>;
pub type TrainState = solver::TrainState<f64>;
pub type SyntheticBundle = synth::SyntheticBundle<f64>;

pub type FeatureMatrixF32 = data::FeatureMatrix<f32>;
pub type WeakSignalSetF32 = data::WeakSignalSet<f32>;
pub type SoftLabelMatrixF32 = data::SoftLabelMatrix<f32>;
pub type LabelModelParamsF32 = model::LabelModelParams<f32>;

pub use data::LabeledEval;
pub use model::LabelModelSpec;
pub use pipeline::{ExperimentConfig, MetricsReport};
pub use prior::PriorMode;
pub use solver::SolverConfig;
