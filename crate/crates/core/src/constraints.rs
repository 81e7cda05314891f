//! Error-bound constraints derived from weak signals.
//!
//! A signal `q_i` that votes on `n_i` examples and targets label column `k_i`
//! has expected one-vs-all error against labels `y` of
//!
//! ```text
//! err_i(y) = ( mask_i (1 - 2 q_i) . y_k  +  q_i . mask_i ) / n_i
//! ```
//!
//! Requiring `err_i(y) <= bound_i` is the linear inequality `A_i y_k <= b_i` with
//! `A_i = mask_i (1 - 2 q_i)` and `b_i = n_i bound_i - q_i . mask_i`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::data::{LabeledEval, SoftLabelMatrix, WeakSignalSet};
use crate::error::{ensure_dim, Error, Result};
use crate::scalar::Scalar;

/// Per-signal upper bounds on expected error.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundVector<T> {
    bounds: Vec<T>,
}

impl<T: Scalar> BoundVector<T> {
    pub fn new(bounds: Vec<T>) -> Result<Self> {
        if let Some((i, b)) = bounds
            .iter()
            .enumerate()
            .find(|(_, b)| !b.is_finite() || **b < T::zero())
        {
            return Err(Error::invalid(format!("bound {i} is {b}; bounds must be finite and >= 0")));
        }
        Ok(Self { bounds })
    }

    /// The tight default `b = 0`.
    pub fn zeros(n_signals: usize) -> Self {
        Self {
            bounds: vec![T::zero(); n_signals],
        }
    }

    pub fn as_slice(&self) -> &[T] {
        &self.bounds
    }

    pub fn len(&self) -> usize {
        self.bounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bounds.is_empty()
    }
}

/// Linear system `A y <= b` with one row per weak signal.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSystem<T> {
    rows: Array2<T>,
    offsets: Array1<T>,
    columns: Vec<usize>,
    covered_counts: Vec<usize>,
    n_columns: usize,
}

impl<T: Scalar> ConstraintSystem<T> {
    /// `A`, shape `n_signals x n_examples`.
    pub fn rows(&self) -> ArrayView2<'_, T> {
        self.rows.view()
    }

    /// `b`, one entry per signal.
    pub fn offsets(&self) -> ArrayView1<'_, T> {
        self.offsets.view()
    }

    /// Label column each row constrains.
    pub fn columns(&self) -> &[usize] {
        &self.columns
    }

    pub fn covered_counts(&self) -> &[usize] {
        &self.covered_counts
    }

    pub fn n_signals(&self) -> usize {
        self.rows.nrows()
    }

    pub fn n_examples(&self) -> usize {
        self.rows.ncols()
    }

    pub fn n_columns(&self) -> usize {
        self.n_columns
    }

    /// `A_i y_{k_i}` for every row.
    pub fn apply(&self, labels: ArrayView2<'_, T>) -> Result<Array1<T>> {
        ensure_dim("constraint apply: examples", self.n_examples(), labels.nrows())?;
        ensure_dim("constraint apply: label columns", self.n_columns, labels.ncols())?;
        Ok(self
            .rows
            .rows()
            .into_iter()
            .zip(&self.columns)
            .map(|(a, &k)| a.dot(&labels.column(k)))
            .collect())
    }
}

/// Expected one-vs-all error of one signal on the examples it covers.
pub fn empirical_error<T: Scalar>(votes: &[Option<T>], labels: ArrayView1<'_, T>) -> Result<T> {
    ensure_dim("empirical_error: example count", votes.len(), labels.len())?;
    let two = T::of(2.0);
    let mut covered = 0usize;
    let mut total = T::zero();
    for (q, &y) in votes.iter().zip(labels.iter()) {
        if let Some(q) = *q {
            covered += 1;
            total += (T::one() - two * q) * y + q;
        }
    }
    if covered == 0 {
        return Err(Error::AllAbstain { signal: 0 });
    }
    Ok(total / T::of(covered as f64))
}

/// Assemble `A` and `b` from the signals and their error bounds.
pub fn build_constraint_system<T: Scalar>(
    signals: &WeakSignalSet<T>,
    bounds: &BoundVector<T>,
) -> Result<ConstraintSystem<T>> {
    let (n, m) = (signals.n_examples(), signals.n_signals());
    ensure_dim("bounds length", m, bounds.len())?;
    let two = T::of(2.0);
    let mut rows = Array2::zeros((m, n));
    let mut offsets = Array1::zeros(m);
    let mut covered_counts = Vec::with_capacity(m);
    let values = signals.values();
    let mask = signals.mask();
    for i in 0..m {
        let mut count = 0usize;
        let mut vote_sum = T::zero();
        for j in 0..n {
            if mask[[j, i]] {
                let q = values[[j, i]];
                rows[[i, j]] = T::one() - two * q;
                vote_sum += q;
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::AllAbstain { signal: i });
        }
        offsets[i] = T::of(count as f64) * bounds.as_slice()[i] - vote_sum;
        covered_counts.push(count);
    }
    Ok(ConstraintSystem {
        rows,
        offsets,
        columns: (0..m).map(|i| signals.column_of(i)).collect(),
        covered_counts,
        n_columns: signals.n_columns(),
    })
}

/// `A_i f[:, k_i] - b_i - xi_i`; positive entries are violated constraints.
pub fn violations<T: Scalar>(
    system: &ConstraintSystem<T>,
    labels: &SoftLabelMatrix<T>,
    slack: ArrayView1<'_, T>,
) -> Result<Array1<T>> {
    violations_raw(system, labels.view(), slack)
}

pub(crate) fn violations_raw<T: Scalar>(
    system: &ConstraintSystem<T>,
    labels: ArrayView2<'_, T>,
    slack: ArrayView1<'_, T>,
) -> Result<Array1<T>> {
    ensure_dim("violations: slack length", system.n_signals(), slack.len())?;
    if slack.iter().any(|&s| s < T::zero()) {
        return Err(Error::invalid("slack must be non-negative"));
    }
    let applied = system.apply(labels)?;
    Ok(applied - &system.offsets - slack)
}

/// Bounds estimated from a labeled validation subset.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundEstimate<T> {
    pub bounds: BoundVector<T>,
    /// Signals that abstain on every validation example; their bound defaults to 0.
    pub uncovered_signals: Vec<usize>,
}

/// Empirical one-vs-all error of each signal on the validation rows, clamped to `[0, 1]`.
///
/// `rows[v]` is the signal-matrix row that `validation.labels()[v]` belongs to.
pub fn estimate_bounds<T: Scalar>(
    signals: &WeakSignalSet<T>,
    rows: &[usize],
    validation: &LabeledEval,
) -> Result<BoundEstimate<T>> {
    ensure_dim("validation rows", rows.len(), validation.len())?;
    if let Some(&bad) = rows.iter().find(|&&j| j >= signals.n_examples()) {
        return Err(Error::invalid(format!("validation row {bad} out of range")));
    }
    let mut bounds = Vec::with_capacity(signals.n_signals());
    let mut uncovered_signals = Vec::new();
    for i in 0..signals.n_signals() {
        let votes: Vec<Option<T>> = rows.iter().map(|&j| signals.vote(j, i)).collect();
        let truth = validation.one_vs_all::<T>(signals.column_of(i));
        match empirical_error(&votes, truth.view()) {
            Ok(e) => bounds.push(e.max(T::zero()).min(T::one())),
            Err(Error::AllAbstain { .. }) => {
                uncovered_signals.push(i);
                bounds.push(T::zero());
            }
            Err(e) => return Err(e),
        }
    }
    Ok(BoundEstimate {
        bounds: BoundVector::new(bounds)?,
        uncovered_signals,
    })
}
