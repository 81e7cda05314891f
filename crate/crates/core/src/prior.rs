//! Default labelings the label model is regularized toward.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{SoftLabelMatrix, WeakSignalSet};
use crate::scalar::Scalar;

/// Which prior labeling the squared-distance regularizer pulls toward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorMode {
    #[default]
    Majority,
    Uniform,
    None,
}

impl std::str::FromStr for PriorMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "majority" => Ok(PriorMode::Majority),
            "uniform" => Ok(PriorMode::Uniform),
            "none" => Ok(PriorMode::None),
            other => Err(format!("unknown prior mode `{other}` (majority|uniform|none)")),
        }
    }
}

impl std::fmt::Display for PriorMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PriorMode::Majority => "majority",
            PriorMode::Uniform => "uniform",
            PriorMode::None => "none",
        })
    }
}

/// Build the prior for `mode`, or `None` when regularization is disabled.
pub fn build_prior<T: Scalar>(mode: PriorMode, signals: &WeakSignalSet<T>) -> Option<SoftLabelMatrix<T>> {
    match mode {
        PriorMode::Majority => Some(majority_vote_prior(signals)),
        PriorMode::Uniform => Some(uniform_prior(signals.n_examples(), signals.n_columns())),
        PriorMode::None => None,
    }
}

/// Hard majority vote: each vote is rounded at 0.5, then tallied per class.
///
/// Binary: 1 if the rounded votes average above one half, 0 below, 0.5 on a tie
/// or when nobody votes. Multiclass: per-class tallies in {0, 0.5, 1} are
/// normalized per row; a row with no positive tally becomes uniform.
pub fn majority_vote_prior<T: Scalar>(signals: &WeakSignalSet<T>) -> SoftLabelMatrix<T> {
    let n = signals.n_examples();
    let cols = signals.n_columns();
    let half = T::of(0.5);
    let mut tally = Array2::<T>::zeros((n, cols));
    let mut votes = vec![0usize; cols];
    let mut positive = vec![0usize; cols];
    for j in 0..n {
        votes.iter_mut().for_each(|v| *v = 0);
        positive.iter_mut().for_each(|v| *v = 0);
        for i in 0..signals.n_signals() {
            if let Some(q) = signals.vote(j, i) {
                let k = signals.column_of(i);
                votes[k] += 1;
                positive[k] += usize::from(q >= half);
            }
        }
        for k in 0..cols {
            tally[[j, k]] = match (2 * positive[k]).cmp(&votes[k]) {
                _ if votes[k] == 0 => {
                    if cols == 1 {
                        half
                    } else {
                        T::zero()
                    }
                }
                std::cmp::Ordering::Greater => T::one(),
                std::cmp::Ordering::Less => T::zero(),
                std::cmp::Ordering::Equal => half,
            };
        }
    }
    if cols > 1 {
        let uniform = T::one() / T::of(cols as f64);
        for mut row in tally.rows_mut() {
            let s = row.sum();
            if s > T::zero() {
                row.mapv_inplace(|v| v / s);
            } else {
                row.fill(uniform);
            }
        }
    }
    SoftLabelMatrix::from_trusted(tally)
}

/// 0.5 everywhere for binary tasks, `1/K` for `K` columns.
pub fn uniform_prior<T: Scalar>(n_examples: usize, n_columns: usize) -> SoftLabelMatrix<T> {
    let value = if n_columns == 1 {
        T::of(0.5)
    } else {
        T::one() / T::of(n_columns as f64)
    };
    SoftLabelMatrix::from_trusted(Array2::from_elem((n_examples, n_columns), value))
}
