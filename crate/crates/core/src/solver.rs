//! Saddle-point training of the label model under weak-supervision constraints.
//!
//! The objective is
//!
//! ```text
//! min_{theta, xi >= 0}  ||f(X) - prior||^2 + C sum(xi)   s.t.  A_i f(X)[:, k_i] <= b_i + xi_i
//! ```
//!
//! solved on its Lagrangian
//! `L = ||f - prior||^2 + C sum(xi) + sum_i lambda_i (A_i f_{k_i} - b_i - xi_i)`
//! by Adam descent on the model parameters, projected ascent on `lambda` and
//! projected descent on `xi`, all full batch.

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::{build_constraint_system, violations_raw, BoundVector, ConstraintSystem};
use crate::data::{FeatureMatrix, SoftLabelMatrix, WeakSignalSet};
use crate::error::{ensure_dim, Error, Result};
use crate::model::{backward, forward, init_params, predict_probs, ForwardMode, LabelModelParams, LabelModelSpec};
use crate::optim::{AdamConfig, AdamState};
use crate::prior::{build_prior, uniform_prior, PriorMode};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Weight `C` of the linear slack penalty.
    pub slack_penalty: f64,
    pub prior_mode: PriorMode,
    pub use_slack: bool,
    pub use_constraints: bool,
    pub max_epochs: usize,
    pub convergence_tol: f64,
    /// Epoch span over which the relative Lagrangian change is measured.
    pub convergence_window: usize,
    /// Epochs without improvement of a positive max violation before giving up.
    pub stall_patience: usize,
    /// Adam rate for the label model parameters.
    pub lr_theta: f64,
    /// Adam rate for the free labels of [`fit_direct`].
    pub lr_labels: f64,
    pub lr_lambda: f64,
    pub lr_xi: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            slack_penalty: 10.0,
            prior_mode: PriorMode::Majority,
            use_slack: true,
            use_constraints: true,
            max_epochs: 1000,
            convergence_tol: 1e-3,
            convergence_window: 10,
            stall_patience: 200,
            lr_theta: 1e-4,
            lr_labels: 0.01,
            lr_lambda: 0.01,
            lr_xi: 0.01,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr_theta", self.lr_theta),
            ("lr_labels", self.lr_labels),
            ("lr_lambda", self.lr_lambda),
            ("lr_xi", self.lr_xi),
            ("convergence_tol", self.convergence_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.slack_penalty >= 0.0 && self.slack_penalty.is_finite()) {
            return Err(Error::invalid("slack_penalty must be a finite non-negative number"));
        }
        if self.max_epochs == 0 {
            return Err(Error::invalid("max_epochs must be positive"));
        }
        if self.convergence_window == 0 {
            return Err(Error::invalid("convergence_window must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lagrangian: f64,
    pub max_violation: f64,
    pub mean_slack: f64,
}

/// Why the loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxEpochs,
    /// Violations stopped decreasing; the best-violation iterate was returned.
    Stalled,
}

/// Multipliers, slacks and per-epoch history shared by both solvers.
#[derive(Debug, Clone)]
pub struct DualState<T> {
    pub lambda: Array1<T>,
    pub xi: Array1<T>,
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    pub stop_reason: StopReason,
}

impl<T: Scalar> DualState<T> {
    fn new(n_signals: usize) -> Self {
        Self {
            lambda: Array1::zeros(n_signals),
            xi: Array1::zeros(n_signals),
            epoch: 0,
            history: Vec::new(),
            stop_reason: StopReason::MaxEpochs,
        }
    }

    pub fn converged(&self) -> bool {
        self.stop_reason == StopReason::Converged
    }

    pub fn stalled(&self) -> bool {
        self.stop_reason == StopReason::Stalled
    }

    /// Max violation recorded at the last epoch.
    pub fn last_max_violation(&self) -> Option<f64> {
        self.history.last().map(|r| r.max_violation)
    }
}

/// State of a finished (or interrupted) label-model fit.
#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub params: LabelModelParams<T>,
    pub dual: DualState<T>,
}

#[derive(Debug, Clone)]
pub struct DcwsFit<T> {
    /// Eval-mode predictions of the returned model on the training features.
    pub labels: SoftLabelMatrix<T>,
    pub state: TrainState<T>,
    /// `A f - b - xi` of the returned labels.
    pub final_violations: Array1<T>,
}

#[derive(Debug, Clone)]
pub struct DirectFit<T> {
    pub labels: SoftLabelMatrix<T>,
    pub dual: DualState<T>,
    pub final_violations: Array1<T>,
}

fn check_prior<T: Scalar>(prior: Option<ArrayView2<'_, T>>, f: &ArrayView2<'_, T>) -> Result<()> {
    if let Some(p) = prior {
        ensure_dim("prior rows", f.nrows(), p.nrows())?;
        ensure_dim("prior columns", f.ncols(), p.ncols())?;
    }
    Ok(())
}

/// Value of the Lagrangian. Without a prior the regularizer is dropped.
pub fn lagrangian_value<T: Scalar>(
    f: &SoftLabelMatrix<T>,
    prior: Option<&SoftLabelMatrix<T>>,
    system: &ConstraintSystem<T>,
    lambda: ArrayView1<'_, T>,
    xi: ArrayView1<'_, T>,
    slack_penalty: T,
) -> Result<T> {
    lagrangian_raw(f.view(), prior.map(|p| p.view()), system, lambda, xi, slack_penalty)
}

/// [`lagrangian_value`] on any matrix of the right shape, not only valid soft labels.
pub fn lagrangian_raw<T: Scalar>(
    f: ArrayView2<'_, T>,
    prior: Option<ArrayView2<'_, T>>,
    system: &ConstraintSystem<T>,
    lambda: ArrayView1<'_, T>,
    xi: ArrayView1<'_, T>,
    slack_penalty: T,
) -> Result<T> {
    check_prior(prior, &f)?;
    ensure_dim("lambda length", system.n_signals(), lambda.len())?;
    if lambda.iter().any(|&l| l < T::zero()) {
        return Err(Error::invalid("lambda must be non-negative"));
    }
    let regularizer = match prior {
        Some(p) => Zip::from(&f).and(&p).fold(T::zero(), |acc, &a, &b| acc + (a - b) * (a - b)),
        None => T::zero(),
    };
    let slack = violations_raw(system, f, xi)?;
    Ok(regularizer + slack_penalty * xi.sum() + lambda.dot(&slack))
}

/// `dL/df`: `2 (f - prior)` plus `lambda_i A_i` in column `k_i` for every signal.
pub fn output_gradient<T: Scalar>(
    f: &SoftLabelMatrix<T>,
    prior: Option<&SoftLabelMatrix<T>>,
    system: &ConstraintSystem<T>,
    lambda: ArrayView1<'_, T>,
) -> Result<Array2<T>> {
    output_gradient_raw(f.view(), prior.map(|p| p.view()), system, lambda)
}

/// [`output_gradient`] on any matrix of the right shape.
pub fn output_gradient_raw<T: Scalar>(
    f: ArrayView2<'_, T>,
    prior: Option<ArrayView2<'_, T>>,
    system: &ConstraintSystem<T>,
    lambda: ArrayView1<'_, T>,
) -> Result<Array2<T>> {
    check_prior(prior, &f)?;
    ensure_dim("lambda length", system.n_signals(), lambda.len())?;
    ensure_dim("gradient: examples", system.n_examples(), f.nrows())?;
    ensure_dim("gradient: label columns", system.n_columns(), f.ncols())?;
    let two = T::of(2.0);
    let mut grad = match prior {
        Some(p) => Zip::from(&f).and(&p).map_collect(|&a, &b| two * (a - b)),
        None => Array2::zeros(f.raw_dim()),
    };
    for ((row, &k), &l) in system.rows().rows().into_iter().zip(system.columns()).zip(lambda.iter()) {
        if l != T::zero() {
            grad.column_mut(k).scaled_add(l, &row);
        }
    }
    Ok(grad)
}

/// Tracks history, convergence and stalling across epochs.
struct Monitor {
    tol: f64,
    window: usize,
    patience: usize,
    /// Without constraints the violation is not optimized, so only the Lagrangian is watched.
    track_violation: bool,
    best_violation: f64,
    since_improvement: usize,
    improved: bool,
}

enum Verdict {
    Continue,
    Converged,
    Stalled,
}

impl Monitor {
    fn new(config: &SolverConfig) -> Self {
        Self {
            tol: config.convergence_tol,
            window: config.convergence_window,
            patience: config.stall_patience,
            track_violation: config.use_constraints,
            best_violation: f64::INFINITY,
            since_improvement: 0,
            improved: false,
        }
    }

    fn observe(&mut self, history: &[EpochRecord]) -> Verdict {
        let last = history.last().expect("observe after recording an epoch");
        let margin = 1e-6 * self.best_violation.abs().max(1.0);
        self.improved = last.max_violation < self.best_violation - margin || self.best_violation.is_infinite();
        if self.improved {
            self.best_violation = last.max_violation;
        }
        if !self.track_violation || last.max_violation <= self.tol {
            self.since_improvement = 0;
            if history.len() > self.window {
                let then = history[history.len() - 1 - self.window].lagrangian;
                let change = (last.lagrangian - then).abs() / last.lagrangian.abs().max(1.0);
                if change <= self.tol {
                    return Verdict::Converged;
                }
            }
            return Verdict::Continue;
        }
        if self.improved {
            self.since_improvement = 0;
        } else {
            self.since_improvement += 1;
        }
        if self.patience > 0 && self.since_improvement >= self.patience {
            Verdict::Stalled
        } else {
            Verdict::Continue
        }
    }
}

/// One projected ascent step on `lambda` and descent step on `xi`.
fn dual_step<T: Scalar>(
    dual: &mut DualState<T>,
    system: &ConstraintSystem<T>,
    f: ArrayView2<'_, T>,
    config: &SolverConfig,
) -> Result<()> {
    let violation = violations_raw(system, f, dual.xi.view())?;
    if config.use_constraints {
        let lr = T::of(config.lr_lambda);
        Zip::from(&mut dual.lambda)
            .and(&violation)
            .for_each(|l, &v| *l = (*l + lr * v).max(T::zero()));
    } else {
        dual.lambda.fill(T::zero());
    }
    if config.use_slack {
        let lr = T::of(config.lr_xi);
        let c = T::of(config.slack_penalty);
        Zip::from(&mut dual.xi)
            .and(&dual.lambda)
            .for_each(|x, &l| *x = (*x - lr * (c - l)).max(T::zero()));
    } else {
        dual.xi.fill(T::zero());
    }
    Ok(())
}

fn record_epoch<T: Scalar>(
    dual: &mut DualState<T>,
    system: &ConstraintSystem<T>,
    f: ArrayView2<'_, T>,
    prior: Option<ArrayView2<'_, T>>,
    config: &SolverConfig,
) -> Result<()> {
    let lagrangian = lagrangian_raw(f, prior, system, dual.lambda.view(), dual.xi.view(), T::of(config.slack_penalty))?;
    let violation = violations_raw(system, f, dual.xi.view())?;
    let max_violation = violation.fold(T::neg_infinity(), |a, &b| a.max(b));
    let mean_slack = dual.xi.mean().unwrap_or(T::zero());
    dual.history.push(EpochRecord {
        epoch: dual.epoch,
        lagrangian: lagrangian.to_f64_lossy(),
        max_violation: max_violation.to_f64_lossy(),
        mean_slack: mean_slack.to_f64_lossy(),
    });
    Ok(())
}

/// Train the label model on `x` under the constraints induced by `signals` and `bounds`.
pub fn fit_dcws<T: Scalar>(
    x: &FeatureMatrix<T>,
    signals: &WeakSignalSet<T>,
    bounds: &BoundVector<T>,
    spec: &LabelModelSpec,
    config: &SolverConfig,
) -> Result<DcwsFit<T>> {
    config.validate()?;
    spec.validate()?;
    ensure_dim("fit: examples", signals.n_examples(), x.n_examples())?;
    ensure_dim("fit: label columns", signals.n_columns(), spec.n_outputs)?;
    let system = build_constraint_system(signals, bounds)?;
    let prior = build_prior(config.prior_mode, signals);
    let params = init_params(spec, x.n_features(), config.seed)?;
    fit_with_system(x, &system, prior.as_ref(), spec, params, config)
}

/// Saddle-point loop for a prebuilt constraint system and prior.
pub fn fit_with_system<T: Scalar>(
    x: &FeatureMatrix<T>,
    system: &ConstraintSystem<T>,
    prior: Option<&SoftLabelMatrix<T>>,
    spec: &LabelModelSpec,
    mut params: LabelModelParams<T>,
    config: &SolverConfig,
) -> Result<DcwsFit<T>> {
    config.validate()?;
    ensure_dim("fit: examples", system.n_examples(), x.n_examples())?;
    let prior = prior.map(|p| p.view());
    // dropout masks use a stream independent of the initialization seed
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x0005_eedd_20b0_u64);
    let mut adam = AdamState::new(AdamConfig::with_lr(config.lr_theta), &params);
    let mut dual = DualState::new(system.n_signals());
    let mut monitor = Monitor::new(config);
    let mut best = params.clone();

    for epoch in 0..config.max_epochs {
        dual.epoch = epoch;
        let cache = forward(spec, &params, x.view(), ForwardMode::Train, &mut rng)?;
        let f = cache.output().view();
        let grad_f = output_gradient_raw(f, prior, system, dual.lambda.view())?;
        let grads = backward(&params, &cache, grad_f.view())?;
        // multipliers see this epoch's output, i.e. lag the parameter step by one epoch
        dual_step(&mut dual, system, f, config)?;
        record_epoch(&mut dual, system, f, prior, config)?;
        let verdict = monitor.observe(&dual.history);
        if monitor.improved {
            best.clone_from(&params);
        }
        match verdict {
            Verdict::Continue => {}
            Verdict::Converged => {
                dual.stop_reason = StopReason::Converged;
                break;
            }
            Verdict::Stalled => {
                dual.stop_reason = StopReason::Stalled;
                break;
            }
        }
        adam.step(&mut params, &grads);
        if !params.is_finite() {
            return Err(Error::NonFinite("label model parameters"));
        }
    }
    if dual.stalled() {
        params = best;
    }
    let labels = predict_probs(spec, &params, x.view())?;
    let final_violations = violations_raw(system, labels.view(), dual.xi.view())?;
    Ok(DcwsFit {
        labels: SoftLabelMatrix::from_trusted(labels),
        state: TrainState { params, dual },
        final_violations,
    })
}

/// Clip into `[0, 1]`; rows of multi-column labels are renormalized (uniform if empty).
fn project_labels<T: Scalar>(y: &mut Array2<T>) {
    y.mapv_inplace(|v| v.max(T::zero()).min(T::one()));
    if y.ncols() > 1 {
        let uniform = T::one() / T::of(y.ncols() as f64);
        for mut row in y.rows_mut() {
            let s = row.sum();
            if s > T::zero() {
                row.mapv_inplace(|v| v / s);
            } else {
                row.fill(uniform);
            }
        }
    }
}

/// Solve for the labels directly, without a label model tying them to features.
pub fn fit_direct<T: Scalar>(
    signals: &WeakSignalSet<T>,
    bounds: &BoundVector<T>,
    prior: Option<&SoftLabelMatrix<T>>,
    config: &SolverConfig,
) -> Result<DirectFit<T>> {
    config.validate()?;
    let system = build_constraint_system(signals, bounds)?;
    let start = prior
        .cloned()
        .unwrap_or_else(|| uniform_prior(signals.n_examples(), signals.n_columns()));
    let mut y = start.into_inner();
    let prior = prior.map(|p| p.view());
    check_prior(prior, &y.view())?;
    let mut adam = AdamState::new(AdamConfig::with_lr(config.lr_labels), &y);
    let mut dual = DualState::new(system.n_signals());
    let mut monitor = Monitor::new(config);
    let mut best = y.clone();

    for epoch in 0..config.max_epochs {
        dual.epoch = epoch;
        let grad = output_gradient_raw(y.view(), prior, &system, dual.lambda.view())?;
        dual_step(&mut dual, &system, y.view(), config)?;
        record_epoch(&mut dual, &system, y.view(), prior, config)?;
        let verdict = monitor.observe(&dual.history);
        if monitor.improved {
            best.clone_from(&y);
        }
        match verdict {
            Verdict::Continue => {}
            Verdict::Converged => {
                dual.stop_reason = StopReason::Converged;
                break;
            }
            Verdict::Stalled => {
                dual.stop_reason = StopReason::Stalled;
                break;
            }
        }
        adam.step(&mut y, &grad);
        project_labels(&mut y);
    }
    if dual.stalled() {
        y = best;
    }
    let final_violations = violations_raw(&system, y.view(), dual.xi.view())?;
    Ok(DirectFit {
        labels: SoftLabelMatrix::from_trusted(y),
        dual,
        final_violations,
    })
}

/// Eval-mode predictions of a trained label model.
pub fn predict<T: Scalar>(
    params: &LabelModelParams<T>,
    spec: &LabelModelSpec,
    x: &FeatureMatrix<T>,
) -> Result<SoftLabelMatrix<T>> {
    Ok(SoftLabelMatrix::from_trusted(predict_probs(spec, params, x.view())?))
}

/// Tab-separated per-epoch log: epoch, Lagrangian, max violation, mean slack.
pub fn write_training_log<W: Write>(history: &[EpochRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "epoch\tlagrangian\tmax_violation\tmean_slack")?;
    for r in history {
        writeln!(out, "{}\t{}\t{}\t{}", r.epoch, r.lagrangian, r.max_violation, r.mean_slack)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_system(rng: &mut ChaCha8Rng, n: usize, m: usize, k: usize) -> (WeakSignalSet<f64>, ConstraintSystem<f64>) {
        let mut votes = Array2::from_shape_simple_fn((n, m), || None);
        for ((j, _), v) in votes.indexed_iter_mut() {
            // first row always covered so no signal is all-abstain
            if j == 0 || rng.random_bool(0.7) {
                *v = Some(rng.random::<f64>());
            }
        }
        let classes = (0..m).map(|_| rng.random_range(0..k)).collect();
        let signals = WeakSignalSet::new(votes, classes, k).unwrap();
        let bounds = BoundVector::new((0..m).map(|_| rng.random_range(0.0..0.5)).collect()).unwrap();
        let system = build_constraint_system(&signals, &bounds).unwrap();
        (signals, system)
    }

    #[test]
    fn lagrangian_by_hand() {
        let signals = WeakSignalSet::binary(Array2::from_elem((1, 1), Some(1.0))).unwrap();
        let system = build_constraint_system(&signals, &BoundVector::zeros(1)).unwrap();
        let f = SoftLabelMatrix::binary(vec![1.0]).unwrap();
        let prior = SoftLabelMatrix::binary(vec![0.0]).unwrap();
        let lambda = ndarray::array![1.0];
        let l = lagrangian_value(&f, Some(&prior), &system, lambda.view(), ndarray::array![0.0].view(), 10.0).unwrap();
        assert_eq!(l, 1.0);
        let l = lagrangian_value(&f, Some(&prior), &system, lambda.view(), ndarray::array![0.5].view(), 10.0).unwrap();
        assert_eq!(l, 5.5);
    }

    #[test]
    fn output_gradient_by_hand() {
        let signals = WeakSignalSet::binary(ndarray::array![[Some(1.0)], [Some(0.0)]]).unwrap();
        let system = build_constraint_system(&signals, &BoundVector::zeros(1)).unwrap();
        let f = SoftLabelMatrix::binary(vec![0.3, 0.6]).unwrap();
        let g = output_gradient(&f, Some(&f), &system, ndarray::array![2.0].view()).unwrap();
        assert_eq!(g, ndarray::array![[-2.0], [2.0]]);
    }

    #[test]
    fn lagrangian_rejects_negative_multipliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (_, system) = random_system(&mut rng, 3, 1, 2);
        let f = Array2::from_elem((3, 1), 0.5);
        let r = lagrangian_raw(f.view(), None, &system, ndarray::array![-1.0].view(), ndarray::array![0.0].view(), 1.0);
        assert!(r.is_err());
    }

    #[test]
    fn training_log_has_header_and_one_line_per_epoch() {
        let history = vec![
            EpochRecord { epoch: 0, lagrangian: 1.5, max_violation: 0.25, mean_slack: 0.0 },
            EpochRecord { epoch: 1, lagrangian: 1.0, max_violation: -0.5, mean_slack: 0.125 },
        ];
        let mut out = Vec::new();
        write_training_log(&history, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text, "epoch\tlagrangian\tmax_violation\tmean_slack\n0\t1.5\t0.25\t0\n1\t1\t-0.5\t0.125\n");
    }

    #[test]
    fn config_rejects_bad_values() {
        assert!(SolverConfig::default().validate().is_ok());
        assert!(SolverConfig { lr_lambda: 0.0, ..Default::default() }.validate().is_err());
        assert!(SolverConfig { slack_penalty: -1.0, ..Default::default() }.validate().is_err());
        assert!(SolverConfig { max_epochs: 0, ..Default::default() }.validate().is_err());
        let parsed: Result<SolverConfig, _> = serde_json::from_str(r#"{"bogus": 1}"#);
        assert!(parsed.is_err());
    }

    proptest! {
        #[test]
        fn dual_step_keeps_multipliers_non_negative(
            seed in 0u64..10_000,
            c in 0.0f64..100.0,
            lr in 1e-3f64..10.0,
            steps in 1usize..40,
            use_slack: bool,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (signals, system) = random_system(&mut rng, 6, 3, 2);
            let config = SolverConfig { slack_penalty: c, lr_lambda: lr, lr_xi: lr, use_slack, ..Default::default() };
            let mut dual = DualState::new(system.n_signals());
            for _ in 0..steps {
                let f = Array2::from_shape_simple_fn((6, signals.n_columns()), || rng.random::<f64>());
                dual_step(&mut dual, &system, f.view(), &config).unwrap();
                prop_assert!(dual.lambda.iter().all(|&l| l >= 0.0));
                prop_assert!(dual.xi.iter().all(|&x| x >= 0.0));
            }
        }
    }
}
