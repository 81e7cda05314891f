//! Trials of the full protocol: data, labels, label metrics, end model, test metrics.

use std::time::Instant;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{BoundsSource, ExperimentConfig, Method};
use super::end_model::train_end_model;
use crate::constraints::{estimate_bounds, BoundVector};
use crate::data::{covered_rows, FeatureMatrix, LabeledEval, SoftLabelMatrix, WeakSignalSet};
use crate::error::{ensure_dim, Error, Result};
use crate::io::{read_bounds, read_features, read_labels, read_signals, SignalMeta};
use crate::kmeans::{kmeans, one_hot, KMeansMode};
use crate::metrics::{accuracy, f1_score, mean_std};
use crate::prior::{build_prior, majority_vote_prior};
use crate::solver::{fit_dcws, fit_direct, SolverConfig, StopReason};
use crate::synth::{generate, SyntheticSpec};

/// Lloyd iteration cap for cluster-label features.
const KMEANS_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub trial: usize,
    pub seed: u64,
    /// SHA-256 of the trial's input data.
    pub data_fingerprint: String,
    /// Examples the labels were fitted (and label accuracy measured) on.
    pub n_fit: usize,
    pub label_accuracy: f64,
    pub label_f1: f64,
    pub test_accuracy: Option<f64>,
    pub test_f1: Option<f64>,
    /// Solver epochs; absent for majority vote.
    pub epochs: Option<usize>,
    pub stop_reason: Option<StopReason>,
    /// Largest constraint violation of the returned labels.
    pub max_violation: Option<f64>,
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    fn of(values: &[f64]) -> Self {
        let (mean, std) = mean_std(values);
        Self { mean, std }
    }
}

/// Per-trial metrics and their mean and population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub per_trial: Vec<TrialMetrics>,
    pub label_accuracy: Summary,
    /// Absent when no end model was trained.
    pub test_accuracy: Option<Summary>,
    /// Macro F1 of the produced labels.
    pub f1: Summary,
    pub wall_clock_seconds: f64,
}

impl MetricsReport {
    pub fn from_trials(per_trial: Vec<TrialMetrics>) -> Self {
        let collect = |f: fn(&TrialMetrics) -> f64| per_trial.iter().map(f).collect::<Vec<_>>();
        let tests: Option<Vec<f64>> = per_trial.iter().map(|t| t.test_accuracy).collect();
        Self {
            label_accuracy: Summary::of(&collect(|t| t.label_accuracy)),
            test_accuracy: tests.filter(|v| !v.is_empty()).map(|v| Summary::of(&v)),
            f1: Summary::of(&collect(|t| t.label_f1)),
            wall_clock_seconds: per_trial.iter().map(|t| t.wall_clock_seconds).sum(),
            per_trial,
        }
    }
}

/// Everything one trial reads.
pub(crate) struct TrialData {
    pub train_x: FeatureMatrix<f64>,
    pub train_truth: LabeledEval,
    pub signals: WeakSignalSet<f64>,
    pub test: Option<(FeatureMatrix<f64>, LabeledEval)>,
    pub fingerprint: String,
}

fn file_fingerprint(config: &ExperimentConfig) -> Result<String> {
    let mut h = Sha256::new();
    let paths = [&config.features, &config.signals, &config.meta, &config.labels, &config.test_features, &config.test_labels];
    for path in paths.into_iter().flatten() {
        h.update(std::fs::read(path).map_err(|e| Error::io(path, e))?);
        h.update([0u8]);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn load_files(config: &ExperimentConfig) -> Result<TrialData> {
    let (Some(features), Some(signals), Some(meta), Some(labels)) =
        (&config.features, &config.signals, &config.meta, &config.labels)
    else {
        return Err(Error::invalid("file data needs features, signals, meta and labels"));
    };
    let meta = SignalMeta::read(meta)?;
    let train_x = read_features(features)?;
    let signals = read_signals(signals, &meta)?;
    let train_truth = read_labels(labels, meta.n_classes)?;
    ensure_dim("signals rows vs features", train_x.n_examples(), signals.n_examples())?;
    ensure_dim("labels vs features", train_x.n_examples(), train_truth.len())?;
    let test = match (&config.test_features, &config.test_labels) {
        (Some(f), Some(l)) => {
            let x = read_features(f)?;
            let t = read_labels(l, meta.n_classes)?;
            ensure_dim("test labels vs test features", x.n_examples(), t.len())?;
            Some((x, t))
        }
        _ => None,
    };
    Ok(TrialData {
        train_x,
        train_truth,
        signals,
        test,
        fingerprint: file_fingerprint(config)?,
    })
}

fn synthetic_data(spec: &SyntheticSpec, seed: u64) -> Result<TrialData> {
    let spec = SyntheticSpec { seed, ..spec.clone() };
    let bundle = generate::<f64>(&spec)?;
    let fingerprint = bundle.fingerprint();
    Ok(TrialData {
        test: (spec.n_test > 0).then_some((bundle.test_x, bundle.test_truth)),
        train_x: bundle.train_x,
        train_truth: bundle.train_truth,
        signals: bundle.signals,
        fingerprint,
    })
}

pub(crate) fn load_trial_data(config: &ExperimentConfig, trial: usize) -> Result<TrialData> {
    if config.features.is_some() {
        load_files(config)
    } else {
        synthetic_data(&config.synthetic, config.trial_seed(trial))
    }
}

/// One-hot k-means cluster labels of the training rows.
fn cluster_features(x: &FeatureMatrix<f64>, k: usize, seed: u64) -> Result<FeatureMatrix<f64>> {
    let result = kmeans(x.view(), k, seed, KMEANS_MAX_ITERS, KMeansMode::Lloyd)?;
    FeatureMatrix::new(one_hot(&result.assignments, k))
}

fn validation_rows(n: usize, fraction: f64, seed: u64) -> Vec<usize> {
    let count = ((n as f64 * fraction).round() as usize).clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = rand::seq::index::sample(&mut rng, n, count).into_vec();
    rows.sort_unstable();
    rows
}

fn bounds_for(
    config: &ExperimentConfig,
    signals: &WeakSignalSet<f64>,
    truth: &LabeledEval,
    seed: u64,
) -> Result<BoundVector<f64>> {
    let bounds = match config.bounds {
        BoundsSource::Zero => BoundVector::zeros(signals.n_signals()),
        BoundsSource::File => {
            let path = config.bounds_file.as_ref().ok_or_else(|| Error::invalid("bounds_file is not set"))?;
            read_bounds(path)?
        }
        BoundsSource::Validation => {
            let rows = validation_rows(signals.n_examples(), config.validation_fraction, seed);
            estimate_bounds(signals, &rows, &truth.select_rows(&rows))?.bounds
        }
    };
    ensure_dim("bounds per signal", signals.n_signals(), bounds.len())?;
    Ok(bounds)
}

struct Labels {
    labels: SoftLabelMatrix<f64>,
    epochs: Option<usize>,
    stop_reason: Option<StopReason>,
    max_violation: Option<f64>,
}

fn max_of(v: &ndarray::Array1<f64>) -> f64 {
    v.fold(f64::NEG_INFINITY, |a, &b| a.max(b))
}

fn produce_labels(
    config: &ExperimentConfig,
    x: &FeatureMatrix<f64>,
    signals: &WeakSignalSet<f64>,
    bounds: &BoundVector<f64>,
    solver: &SolverConfig,
) -> Result<Labels> {
    match config.method {
        Method::MajorityVote => Ok(Labels {
            labels: majority_vote_prior(signals),
            epochs: None,
            stop_reason: None,
            max_violation: None,
        }),
        Method::Direct => {
            let prior = build_prior(solver.prior_mode, signals);
            let fit = fit_direct(signals, bounds, prior.as_ref(), solver)?;
            Ok(Labels {
                epochs: Some(fit.dual.history.len()),
                stop_reason: Some(fit.dual.stop_reason),
                max_violation: Some(max_of(&fit.final_violations)),
                labels: fit.labels,
            })
        }
        Method::Dcws => {
            let spec = config.label_model.to_spec(signals.n_columns());
            let fit = fit_dcws(x, signals, bounds, &spec, solver)?;
            Ok(Labels {
                epochs: Some(fit.state.dual.history.len()),
                stop_reason: Some(fit.state.dual.stop_reason),
                max_violation: Some(max_of(&fit.final_violations)),
                labels: fit.labels,
            })
        }
    }
}

/// Run trial `trial` on already loaded data.
pub(crate) fn run_trial(config: &ExperimentConfig, data: &TrialData, trial: usize) -> Result<TrialMetrics> {
    let start = Instant::now();
    let seed = config.trial_seed(trial);
    let solver = SolverConfig { seed, ..config.solver.clone() };

    let label_x = match config.cluster_k {
        Some(k) => cluster_features(&data.train_x, k, seed)?,
        None => data.train_x.clone(),
    };
    let covered = covered_rows(&data.signals);
    let rows: Vec<usize> = if config.dcws_plus { (0..data.signals.n_examples()).collect() } else { covered.clone() };
    if rows.is_empty() {
        return Err(Error::Empty("no weak signal covers any training example"));
    }
    let signals = data.signals.select_rows(&rows)?;
    let truth = data.train_truth.select_rows(&rows);
    let x = label_x.select_rows(&rows);
    let bounds = bounds_for(config, &signals, &truth, seed)?;

    let produced = produce_labels(config, &x, &signals, &bounds, &solver)?;
    let label_accuracy = accuracy(&produced.labels, &truth)?;
    let label_f1 = f1_score(&produced.labels, &truth)?;

    let (test_accuracy, test_f1) = match (&data.test, config.train_end_model) {
        (Some((test_x, test_truth)), true) => {
            // the end model always sees the raw features
            let (end_x, end_labels) = if config.dcws_plus && config.end_model_covered_only {
                // with dcws_plus, label rows are the example indices themselves
                (data.train_x.select_rows(&covered), produced.labels.select_rows(&covered))
            } else {
                (data.train_x.select_rows(&rows), produced.labels.clone())
            };
            let preds = train_end_model(&end_x, &end_labels, test_x, &config.end_model, seed)?;
            (Some(accuracy(&preds, test_truth)?), Some(f1_score(&preds, test_truth)?))
        }
        _ => (None, None),
    };

    Ok(TrialMetrics {
        trial,
        seed,
        data_fingerprint: data.fingerprint.clone(),
        n_fit: rows.len(),
        label_accuracy,
        label_f1,
        test_accuracy,
        test_f1,
        epochs: produced.epochs,
        stop_reason: produced.stop_reason,
        max_violation: produced.max_violation,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Run every trial of `config` and aggregate.
pub fn run_experiment(config: &ExperimentConfig) -> Result<MetricsReport> {
    config.validate()?;
    let mut trials = Vec::with_capacity(config.trials);
    for t in 0..config.trials {
        let data = load_trial_data(config, t)?;
        trials.push(run_trial(config, &data, t)?);
    }
    Ok(MetricsReport::from_trials(trials))
}
