//! Oracle measurements shared by the focused tests and the acceptance suite.
//! Each function builds one seeded random instance and returns the measured discrepancy.

#![allow(dead_code)]

use dcws::constraints::{build_constraint_system, empirical_error, BoundVector, ConstraintSystem};
use dcws::data::{FeatureMatrix, SoftLabelMatrix, WeakSignalSet};
use dcws::gradcheck::{finite_diff_gradients, max_relative_error};
use dcws::model::{backward, forward, init_params, Architecture, ForwardMode, LabelModelParams, LabelModelSpec};
use dcws::optim::Parameters;
use dcws::prior::{build_prior, majority_vote_prior, PriorMode};
use dcws::solver::{fit_dcws, fit_direct, lagrangian_raw, output_gradient_raw, SolverConfig};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const FD_EPS: f64 = 1e-5;
pub const GRID_STEP: f64 = 0.05;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.5..1.5))
}

fn random_spec(rng: &mut ChaCha8Rng) -> LabelModelSpec {
    let cols = if rng.random_bool(0.5) { 1 } else { rng.random_range(2..5) };
    match rng.random_range(0..3) {
        0 => LabelModelSpec::linear(cols),
        1 => LabelModelSpec::two_layer(cols).with_hidden_units(rng.random_range(1..8)),
        _ => LabelModelSpec {
            architecture: Architecture::ThreeLayer,
            ..LabelModelSpec::two_layer(cols).with_hidden_units(rng.random_range(1..6))
        },
    }
}

/// Relative error of the backward pass against central differences of `sum(output * g)`.
pub fn backward_fd_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = random_spec(&mut rng);
    let n = rng.random_range(1..=16);
    let d = rng.random_range(1..=8);
    let x = random_matrix(&mut rng, n, d);
    let g = random_matrix(&mut rng, n, spec.n_outputs);
    let mut params: LabelModelParams<f64> = init_params(&spec, d, seed).unwrap();
    // zero biases put dead-unit pre-activations exactly on the ReLU kink
    for t in params.slices_mut() {
        t.iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
    }
    let loss = |p: &LabelModelParams<f64>| {
        let mut r = ChaCha8Rng::seed_from_u64(0);
        (forward(&spec, p, x.view(), ForwardMode::Eval, &mut r).unwrap().output() * &g).sum()
    };
    let mut fwd_rng = ChaCha8Rng::seed_from_u64(0);
    let cache = forward(&spec, &params, x.view(), ForwardMode::Eval, &mut fwd_rng).unwrap();
    let analytic = backward(&params, &cache, g.view()).unwrap();
    let numeric = finite_diff_gradients(&params, loss, FD_EPS);
    max_relative_error(&analytic.flatten(), &numeric.flatten(), 1e-6)
}

/// Binary or multiclass signals with soft votes and abstentions, plus random bounds.
fn random_signals(rng: &mut ChaCha8Rng, n: usize, m: usize, k: usize) -> (WeakSignalSet<f64>, BoundVector<f64>) {
    let mut votes = Array2::from_elem((n, m), None);
    for ((j, _), v) in votes.indexed_iter_mut() {
        // first row always covered so no signal is all-abstain
        if j == 0 || rng.random_bool(0.7) {
            *v = Some(rng.random::<f64>());
        }
    }
    let classes = (0..m).map(|_| rng.random_range(0..k)).collect();
    let signals = WeakSignalSet::new(votes, classes, k).unwrap();
    let bounds = BoundVector::new((0..m).map(|_| rng.random_range(0.0..0.5)).collect()).unwrap();
    (signals, bounds)
}

fn random_signal_instance(seed: u64) -> (ChaCha8Rng, WeakSignalSet<f64>, BoundVector<f64>, ConstraintSystem<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=12);
    let m = rng.random_range(1..=4);
    let k = rng.random_range(2..=4);
    let (signals, bounds) = random_signals(&mut rng, n, m, k);
    let system = build_constraint_system(&signals, &bounds).unwrap();
    (rng, signals, bounds, system)
}

/// Relative error of `output_gradient` against central differences of the Lagrangian, with and without a prior.
pub fn output_gradient_fd_error(seed: u64) -> f64 {
    let (mut rng, signals, _, system) = random_signal_instance(seed);
    let (n, m) = (signals.n_examples(), signals.n_signals());
    let prior = majority_vote_prior(&signals).into_inner();
    // the Lagrangian is defined on any matrix, so finite differences may leave the simplex
    let f = Array2::from_shape_simple_fn((n, signals.n_columns()), || rng.random_range(0.05..0.95));
    let lambda: Array1<f64> = (0..m).map(|_| rng.random_range(0.0..20.0)).collect();
    let xi: Array1<f64> = (0..m).map(|_| rng.random_range(0.0..2.0)).collect();
    let mut worst: f64 = 0.0;
    for prior in [Some(prior.view()), None] {
        let analytic = output_gradient_raw(f.view(), prior, &system, lambda.view()).unwrap();
        let numeric = finite_diff_gradients(
            &f,
            |g: &Array2<f64>| lagrangian_raw(g.view(), prior, &system, lambda.view(), xi.view(), 10.0).unwrap(),
            FD_EPS,
        );
        worst = worst.max(max_relative_error(analytic.as_slice().unwrap(), numeric.as_slice().unwrap(), 1e-3));
    }
    worst
}

/// Largest `|(A_i y - b_i) - n_i (err_i - bound_i)|` over signals for random soft labels `y`.
pub fn constraint_identity_error(seed: u64) -> f64 {
    let (mut rng, signals, bounds, system) = random_signal_instance(seed);
    let y = Array2::from_shape_simple_fn((signals.n_examples(), signals.n_columns()), || rng.random::<f64>());
    let ay = system.apply(y.view()).unwrap();
    (0..signals.n_signals())
        .map(|i| {
            let err = empirical_error(&signals.signal_votes(i), y.column(signals.column_of(i))).unwrap();
            let n_i = signals.covered_count(i) as f64;
            ((ay[i] - system.offsets()[i]) - n_i * (err - bounds.as_slice()[i])).abs()
        })
        .fold(0.0, f64::max)
}

/// Dense features and hard binary votes; row 0 is covered by every signal.
pub fn random_problem(seed: u64, n: usize, d: usize, m: usize) -> (FeatureMatrix<f64>, WeakSignalSet<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_simple_fn((n, d), || rng.random_range(-1.0..1.0));
    let mut votes = Array2::from_elem((n, m), None);
    for ((j, _), v) in votes.indexed_iter_mut() {
        if j == 0 || rng.random_bool(0.6) {
            *v = Some(if rng.random_bool(0.5) { 1.0 } else { 0.0 });
        }
    }
    (FeatureMatrix::new(x).unwrap(), WeakSignalSet::binary(votes).unwrap())
}

/// Smallest multiplier or slack seen at the end of epochs `1..=epochs`, over slow and fast dual rates.
pub fn min_dual_over_epochs(seed: u64, epochs: usize) -> f64 {
    let (x, signals) = random_problem(50 + seed, 20, 4, 3);
    let spec = LabelModelSpec::two_layer(1).with_hidden_units(8);
    let bounds = BoundVector::new(vec![0.2; 3]).unwrap();
    let mut lowest = f64::INFINITY;
    // fast dual rates drive both projections to their clamp
    for dual_lr in [0.01, 1.0] {
        for max_epochs in 1..=epochs {
            let config = SolverConfig {
                max_epochs,
                lr_theta: 0.01,
                lr_lambda: dual_lr,
                lr_xi: dual_lr,
                seed,
                ..Default::default()
            };
            let dual = fit_dcws(&x, &signals, &bounds, &spec, &config).unwrap().state.dual;
            lowest = dual.lambda.iter().chain(dual.xi.iter()).fold(lowest, |a, &b| a.min(b));
        }
    }
    lowest
}

/// `||y - p||^2 + C sum_i max(0, A_i y - b_i)`: the Lagrangian with the slack eliminated.
pub fn objective(y: &[f64], prior: &[f64], system: &ConstraintSystem<f64>, c: f64) -> f64 {
    let reg: f64 = y.iter().zip(prior).map(|(a, b)| (a - b) * (a - b)).sum();
    let ya = Array1::from(y.to_vec());
    let penalty: f64 = system
        .rows()
        .rows()
        .into_iter()
        .zip(system.offsets())
        .map(|(row, &b)| (row.dot(&ya) - b).max(0.0))
        .sum();
    reg + c * penalty
}

/// Minimum of [`objective`] over the `GRID_STEP` lattice on `[0, 1]^n`.
pub fn grid_minimum(n: usize, prior: &[f64], system: &ConstraintSystem<f64>, c: f64) -> f64 {
    let steps = (1.0 / GRID_STEP).round() as usize + 1;
    let mut best = f64::INFINITY;
    let mut idx = vec![0usize; n];
    loop {
        let y: Vec<f64> = idx.iter().map(|&i| i as f64 * GRID_STEP).collect();
        best = best.min(objective(&y, prior, system, c));
        let mut pos = 0;
        loop {
            if pos == n {
                return best;
            }
            idx[pos] += 1;
            if idx[pos] < steps {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

pub struct TinyInstance {
    pub signals: WeakSignalSet<f64>,
    pub bounds: BoundVector<f64>,
    pub c: f64,
}

pub fn tiny_instance(seed: u64) -> TinyInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=4);
    let m = rng.random_range(1..=2);
    let mut votes = Array2::from_elem((n, m), None);
    for ((j, _), v) in votes.indexed_iter_mut() {
        if j == 0 || rng.random_bool(0.75) {
            *v = Some(if rng.random_bool(0.5) { 1.0 } else { 0.0 });
        }
    }
    TinyInstance {
        signals: WeakSignalSet::binary(votes).unwrap(),
        bounds: BoundVector::new((0..m).map(|_| rng.random_range(0.0..0.4)).collect()).unwrap(),
        // small C keeps the optimum inside (0, 1), reachable by a sigmoid
        c: rng.random_range(0.05..0.4),
    }
}

/// Early stopping off, so the objective gap measures the optimizer rather than the stopping rule.
pub fn long_run(config: SolverConfig) -> SolverConfig {
    SolverConfig {
        max_epochs: 20_000,
        convergence_tol: 1e-9,
        stall_patience: 0,
        ..config
    }
}

fn labels_vec(labels: &SoftLabelMatrix<f64>) -> Vec<f64> {
    labels.column(0).to_vec()
}

/// Objective of the direct fit minus the grid minimum.
pub fn direct_grid_gap(seed: u64) -> f64 {
    let inst = tiny_instance(seed);
    let system = build_constraint_system(&inst.signals, &inst.bounds).unwrap();
    let prior = build_prior(PriorMode::Uniform, &inst.signals).unwrap();
    let config = long_run(SolverConfig { slack_penalty: inst.c, prior_mode: PriorMode::Uniform, ..Default::default() });
    let fit = fit_direct(&inst.signals, &inst.bounds, Some(&prior), &config).unwrap();
    let p = labels_vec(&prior);
    objective(&labels_vec(&fit.labels), &p, &system, inst.c) - grid_minimum(inst.signals.n_examples(), &p, &system, inst.c)
}

/// Objective of a linear label model on identity features minus the grid minimum.
pub fn label_model_grid_gap(seed: u64) -> f64 {
    let inst = tiny_instance(seed);
    let n = inst.signals.n_examples();
    let system = build_constraint_system(&inst.signals, &inst.bounds).unwrap();
    let prior = build_prior(PriorMode::Uniform, &inst.signals).unwrap();
    let x = FeatureMatrix::new(Array2::eye(n)).unwrap();
    let config = long_run(SolverConfig {
        slack_penalty: inst.c,
        prior_mode: PriorMode::Uniform,
        lr_theta: 0.01,
        seed,
        ..Default::default()
    });
    let fit = fit_dcws(&x, &inst.signals, &inst.bounds, &LabelModelSpec::linear(1), &config).unwrap();
    let p = labels_vec(&prior);
    objective(&labels_vec(&fit.labels), &p, &system, inst.c) - grid_minimum(n, &p, &system, inst.c)
}

/// Mean squared distance to the majority-vote prior with constraints off, and whether every multiplier stayed 0.
pub fn unconstrained_prior_mse(seed: u64) -> (f64, bool) {
    let (x, signals) = random_problem(seed, 30, 30, 3);
    let config = SolverConfig {
        use_constraints: false,
        lr_theta: 0.01,
        max_epochs: 3000,
        convergence_tol: 1e-6,
        seed,
        ..Default::default()
    };
    let spec = LabelModelSpec::two_layer(1).with_hidden_units(64);
    let fit = fit_dcws(&x, &signals, &BoundVector::zeros(3), &spec, &config).unwrap();
    let prior = build_prior(PriorMode::Majority, &signals).unwrap();
    let mse = (&fit.labels.view() - &prior.view()).mapv(|v| v * v).mean().unwrap();
    (mse, fit.state.dual.lambda.iter().all(|&l| l == 0.0))
}

/// Label difference between two rows with equal features but different votes.
pub fn identical_rows_gap(seed: u64) -> f64 {
    let (x, signals) = random_problem(seed, 12, 5, 3);
    let mut xv = x.into_inner();
    let mut votes = Array2::from_elem((12, 3), None);
    for j in 0..12 {
        for i in 0..3 {
            votes[[j, i]] = signals.vote(j, i);
        }
    }
    let row = xv.row(3).to_owned();
    xv.row_mut(9).assign(&row);
    votes[[9, 0]] = Some(1.0 - votes[[3, 0]].unwrap_or(0.0));
    let signals = WeakSignalSet::binary(votes).unwrap();
    let x = FeatureMatrix::new(xv).unwrap();
    let spec = LabelModelSpec::two_layer(1).with_hidden_units(16);
    let config = SolverConfig { max_epochs: 200, seed, ..Default::default() };
    let fit = fit_dcws(&x, &signals, &BoundVector::zeros(3), &spec, &config).unwrap();
    (fit.labels.view()[[3, 0]] - fit.labels.view()[[9, 0]]).abs()
}
