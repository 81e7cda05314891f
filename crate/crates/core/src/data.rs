//! Domain types: feature matrices, weak signals, soft labels and held-out truth.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{ensure_dim, Error, Result};
use crate::scalar::Scalar;

/// Sentinel used for abstentions in external vote files.
pub const ABSTAIN_SENTINEL: f64 = -1.0;

/// Number of label columns for a task with `n_classes` classes.
///
/// Binary tasks (`n_classes <= 2`) use a single probability column.
#[inline]
pub fn label_columns(n_classes: usize) -> usize {
    if n_classes <= 2 {
        1
    } else {
        n_classes
    }
}

/// Dense `n_examples x n_features` design matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T> {
    values: Array2<T>,
}

impl<T: Scalar> FeatureMatrix<T> {
    pub fn new(values: Array2<T>) -> Result<Self> {
        if values.nrows() == 0 {
            return Err(Error::Empty("feature matrix has no rows"));
        }
        if values.ncols() == 0 {
            return Err(Error::Empty("feature matrix has no columns"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature matrix"));
        }
        Ok(Self {
            values: values.as_standard_layout().into_owned(),
        })
    }

    pub fn n_examples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, T> {
        self.values.view()
    }

    pub fn into_inner(self) -> Array2<T> {
        self.values
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            values: self.values.select(Axis(0), rows),
        }
    }
}

/// Votes of `m` one-vs-all weak signals over `n` examples.
///
/// Each non-abstaining vote lies in `[0, 1]` and is the signal's belief that the
/// example belongs to the signal's target class.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakSignalSet<T> {
    // abstained entries hold zero; `mask` is the source of truth
    votes: Array2<T>,
    mask: Array2<bool>,
    signal_class: Vec<usize>,
    n_classes: usize,
}

impl<T: Scalar> WeakSignalSet<T> {
    /// Build from an `n x m` matrix of optional votes (`None` = abstain).
    pub fn new(votes: Array2<Option<T>>, signal_class: Vec<usize>, n_classes: usize) -> Result<Self> {
        let (n, m) = votes.dim();
        if n == 0 {
            return Err(Error::Empty("weak signal matrix has no rows"));
        }
        if m == 0 {
            return Err(Error::Empty("weak signal matrix has no signals"));
        }
        if n_classes == 0 {
            return Err(Error::invalid("n_classes must be at least 1"));
        }
        ensure_dim("signal_class length", m, signal_class.len())?;
        if let Some((i, &k)) = signal_class.iter().enumerate().find(|(_, &k)| k >= n_classes.max(2)) {
            return Err(Error::invalid(format!(
                "signal {i} targets class {k}, but there are only {n_classes} classes"
            )));
        }
        let mut values = Array2::zeros((n, m));
        let mut mask = Array2::from_elem((n, m), false);
        for ((j, i), v) in votes.indexed_iter() {
            if let Some(v) = *v {
                if !v.is_finite() || v < T::zero() || v > T::one() {
                    return Err(Error::invalid(format!(
                        "vote of signal {i} on example {j} is {v}, outside [0, 1]"
                    )));
                }
                values[[j, i]] = v;
                mask[[j, i]] = true;
            }
        }
        for i in 0..m {
            if !mask.column(i).iter().any(|&c| c) {
                return Err(Error::AllAbstain { signal: i });
            }
        }
        Ok(Self {
            votes: values,
            mask,
            signal_class,
            n_classes,
        })
    }

    /// Build from a raw matrix where [`ABSTAIN_SENTINEL`] marks abstentions.
    pub fn from_sentinel(raw: &Array2<T>, signal_class: Vec<usize>, n_classes: usize) -> Result<Self> {
        let sentinel = T::of(ABSTAIN_SENTINEL);
        let votes = raw.mapv(|v| if v == sentinel { None } else { Some(v) });
        Self::new(votes, signal_class, n_classes)
    }

    /// Binary task where every signal votes on the positive class.
    pub fn binary(votes: Array2<Option<T>>) -> Result<Self> {
        let m = votes.ncols();
        Self::new(votes, vec![0; m], 2)
    }

    pub fn n_examples(&self) -> usize {
        self.votes.nrows()
    }

    pub fn n_signals(&self) -> usize {
        self.votes.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_columns(&self) -> usize {
        label_columns(self.n_classes)
    }

    pub fn is_binary(&self) -> bool {
        self.n_columns() == 1
    }

    pub fn signal_class(&self) -> &[usize] {
        &self.signal_class
    }

    /// Label column constrained by signal `i`.
    pub fn column_of(&self, signal: usize) -> usize {
        if self.is_binary() {
            0
        } else {
            self.signal_class[signal]
        }
    }

    pub fn vote(&self, example: usize, signal: usize) -> Option<T> {
        if self.mask[[example, signal]] {
            Some(self.votes[[example, signal]])
        } else {
            None
        }
    }

    /// Vote values with abstentions zeroed.
    pub fn values(&self) -> ArrayView2<'_, T> {
        self.votes.view()
    }

    pub fn mask(&self) -> ArrayView2<'_, bool> {
        self.mask.view()
    }

    pub fn signal_votes(&self, signal: usize) -> Vec<Option<T>> {
        (0..self.n_examples()).map(|j| self.vote(j, signal)).collect()
    }

    /// Number of examples signal `i` votes on.
    pub fn covered_count(&self, signal: usize) -> usize {
        self.mask.column(signal).iter().filter(|&&c| c).count()
    }

    /// Raw matrix with abstentions replaced by [`ABSTAIN_SENTINEL`].
    pub fn to_sentinel(&self) -> Array2<T> {
        let sentinel = T::of(ABSTAIN_SENTINEL);
        let mut out = self.votes.clone();
        out.zip_mut_with(&self.mask, |v, &c| {
            if !c {
                *v = sentinel;
            }
        });
        out
    }

    /// Restrict to the given example rows. Fails if a signal ends up abstaining everywhere.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let votes = self.votes.select(Axis(0), rows);
        let mask = self.mask.select(Axis(0), rows);
        for i in 0..mask.ncols() {
            if !mask.column(i).iter().any(|&c| c) {
                return Err(Error::AllAbstain { signal: i });
            }
        }
        Ok(Self {
            votes,
            mask,
            signal_class: self.signal_class.clone(),
            n_classes: self.n_classes,
        })
    }

    /// Reorder (or subset) the signals.
    pub fn select_signals(&self, signals: &[usize]) -> Self {
        Self {
            votes: self.votes.select(Axis(1), signals),
            mask: self.mask.select(Axis(1), signals),
            signal_class: signals.iter().map(|&i| self.signal_class[i]).collect(),
            n_classes: self.n_classes,
        }
    }
}

/// `true` where at least one signal votes on the example.
pub fn coverage<T: Scalar>(signals: &WeakSignalSet<T>) -> Vec<bool> {
    signals
        .mask()
        .rows()
        .into_iter()
        .map(|row| row.iter().any(|&c| c))
        .collect()
}

/// Indices of covered examples.
pub fn covered_rows<T: Scalar>(signals: &WeakSignalSet<T>) -> Vec<usize> {
    coverage(signals)
        .into_iter()
        .enumerate()
        .filter_map(|(j, c)| c.then_some(j))
        .collect()
}

/// Probabilistic labels, one column for binary tasks or `K` columns otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelMatrix<T> {
    probs: Array2<T>,
}

impl<T: Scalar> SoftLabelMatrix<T> {
    pub fn new(probs: Array2<T>) -> Result<Self> {
        if probs.ncols() == 0 {
            return Err(Error::Empty("soft labels have no columns"));
        }
        if probs
            .iter()
            .any(|&p| !p.is_finite() || p < T::zero() || p > T::one())
        {
            return Err(Error::invalid("soft label entries must lie in [0, 1]"));
        }
        if probs.ncols() > 1 {
            let tol = T::of(1e-6).max(T::epsilon() * T::of(64.0));
            for (j, row) in probs.rows().into_iter().enumerate() {
                let s = row.sum();
                if (s - T::one()).abs() > tol {
                    return Err(Error::invalid(format!("soft label row {j} sums to {s}, not 1")));
                }
            }
        }
        Ok(Self {
            probs: probs.as_standard_layout().into_owned(),
        })
    }

    /// Wrap model or projection output already known to satisfy the invariants.
    pub(crate) fn from_trusted(probs: Array2<T>) -> Self {
        debug_assert!(probs.iter().all(|&p| p >= T::zero() && p <= T::one()));
        Self { probs }
    }

    /// Binary labels from a vector of positive-class probabilities.
    pub fn binary(probs: Vec<T>) -> Result<Self> {
        let n = probs.len();
        Self::new(Array2::from_shape_vec((n, 1), probs).expect("n x 1 shape"))
    }

    pub fn n_examples(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_columns(&self) -> usize {
        self.probs.ncols()
    }

    pub fn is_binary(&self) -> bool {
        self.probs.ncols() == 1
    }

    pub fn view(&self) -> ArrayView2<'_, T> {
        self.probs.view()
    }

    pub fn column(&self, k: usize) -> ArrayView1<'_, T> {
        self.probs.column(k)
    }

    pub fn into_inner(self) -> Array2<T> {
        self.probs
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            probs: self.probs.select(Axis(0), rows),
        }
    }

    /// Hard class per example. Binary: probability `>= 0.5` is class 1.
    /// Multiclass: first column attaining the row maximum.
    pub fn predicted_classes(&self) -> Vec<usize> {
        if self.is_binary() {
            let half = T::of(0.5);
            self.probs
                .column(0)
                .iter()
                .map(|&p| usize::from(p >= half))
                .collect()
        } else {
            self.probs
                .rows()
                .into_iter()
                .map(|row| {
                    let mut best = 0;
                    for (k, &p) in row.iter().enumerate() {
                        if p > row[best] {
                            best = k;
                        }
                    }
                    best
                })
                .collect()
        }
    }

    /// One-hot labels of the given classes (single column for binary).
    pub fn one_hot(classes: &[usize], n_classes: usize) -> Result<Self> {
        let cols = label_columns(n_classes);
        let mut probs = Array2::zeros((classes.len(), cols));
        for (j, &c) in classes.iter().enumerate() {
            if c >= n_classes.max(2) {
                return Err(Error::invalid(format!("class {c} out of range")));
            }
            if cols == 1 {
                probs[[j, 0]] = if c == 1 { T::one() } else { T::zero() };
            } else {
                probs[[j, c]] = T::one();
            }
        }
        Ok(Self { probs })
    }
}

/// Held-out integer class labels, used for metrics and bound estimation only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledEval {
    labels: Vec<usize>,
    n_classes: usize,
}

impl LabeledEval {
    pub fn new(labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        let n_classes = n_classes.max(2);
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {n_classes} classes"
            )));
        }
        Ok(Self { labels, n_classes })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            labels: rows.iter().map(|&j| self.labels[j]).collect(),
            n_classes: self.n_classes,
        }
    }

    /// Indicator vector of the label column `column` (binary: the positive class).
    pub fn one_vs_all<T: Scalar>(&self, column: usize) -> Array1<T> {
        let target = if self.n_classes == 2 { 1 } else { column };
        self.labels
            .iter()
            .map(|&l| if l == target { T::one() } else { T::zero() })
            .collect()
    }
}
