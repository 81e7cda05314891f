//! Label and test quality metrics.

use crate::data::{LabeledEval, SoftLabelMatrix};
use crate::error::{ensure_dim, Error, Result};
use crate::scalar::Scalar;

/// Fraction of examples whose predicted class equals the true class.
///
/// Binary predictions are thresholded at 0.5 with exact ties going to class 1.
pub fn accuracy<T: Scalar>(predictions: &SoftLabelMatrix<T>, truth: &LabeledEval) -> Result<f64> {
    ensure_dim("accuracy: example count", truth.len(), predictions.n_examples())?;
    if truth.is_empty() {
        return Err(Error::Empty("accuracy of zero examples"));
    }
    let correct = predictions
        .predicted_classes()
        .iter()
        .zip(truth.labels())
        .filter(|(p, t)| p == t)
        .count();
    Ok(correct as f64 / truth.len() as f64)
}

/// Macro-averaged F1 over the classes that occur in the predictions or the truth.
pub fn f1_score<T: Scalar>(predictions: &SoftLabelMatrix<T>, truth: &LabeledEval) -> Result<f64> {
    ensure_dim("f1: example count", truth.len(), predictions.n_examples())?;
    macro_f1(&predictions.predicted_classes(), truth.labels(), truth.n_classes())
}

/// Macro F1 on hard class assignments.
pub fn macro_f1(predicted: &[usize], truth: &[usize], n_classes: usize) -> Result<f64> {
    ensure_dim("f1: example count", truth.len(), predicted.len())?;
    if truth.is_empty() {
        return Err(Error::Empty("f1 of zero examples"));
    }
    let k = n_classes
        .max(predicted.iter().chain(truth).copied().max().unwrap_or(0) + 1);
    let mut tp = vec![0usize; k];
    let mut pred_count = vec![0usize; k];
    let mut true_count = vec![0usize; k];
    for (&p, &t) in predicted.iter().zip(truth) {
        pred_count[p] += 1;
        true_count[t] += 1;
        if p == t {
            tp[p] += 1;
        }
    }
    let mut total = 0.0;
    let mut present = 0usize;
    for c in 0..k {
        if pred_count[c] == 0 && true_count[c] == 0 {
            continue;
        }
        present += 1;
        // F1 = 2TP / (2TP + FP + FN) = 2TP / (|pred| + |true|)
        total += 2.0 * tp[c] as f64 / (pred_count[c] + true_count[c]) as f64;
    }
    Ok(total / present as f64)
}

/// Sample mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
