//! Central-difference gradient oracle used to validate hand-written backward passes.

use crate::optim::Parameters;
use crate::scalar::Scalar;

/// Central-difference estimate of `d loss / d params` for every parameter value.
///
/// `loss` must be deterministic (eval mode, fixed rng).
pub fn finite_diff_gradients<T, P, F>(params: &P, mut loss: F, epsilon: T) -> P
where
    T: Scalar,
    P: Parameters<T>,
    F: FnMut(&P) -> T,
{
    let mut grads = params.zeros_like();
    let mut probe = params.clone();
    let two_eps = epsilon + epsilon;
    let lens: Vec<usize> = params.slices().iter().map(|s| s.len()).collect();
    for (t, &len) in lens.iter().enumerate() {
        for idx in 0..len {
            let original = probe.slices()[t][idx];
            probe.slices_mut()[t][idx] = original + epsilon;
            let up = loss(&probe);
            probe.slices_mut()[t][idx] = original - epsilon;
            let down = loss(&probe);
            probe.slices_mut()[t][idx] = original;
            grads.slices_mut()[t][idx] = (up - down) / two_eps;
        }
    }
    grads
}

/// Largest element-wise relative error `|a - b| / max(|a|, |b|, floor)`.
pub fn max_relative_error<T: Scalar>(a: &[T], b: &[T], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len(), "compared gradients differ in length");
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let (x, y) = (x.to_f64_lossy(), y.to_f64_lossy());
            (x - y).abs() / x.abs().max(y.abs()).max(floor)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn quadratic_gradient() {
        let theta = array![[0.5, -1.25], [3.0, 0.0]];
        let g = finite_diff_gradients(&theta, |p: &Array2<f64>| p.mapv(|v| v * v).sum(), 1e-5);
        let exact = &theta * 2.0;
        assert!(max_relative_error(g.as_slice().unwrap(), exact.as_slice().unwrap(), 1e-8) < 1e-9);
    }

    #[test]
    fn zero_at_stationary_point() {
        let theta = array![[1.0, -2.0]];
        let g = finite_diff_gradients(
            &theta,
            |p: &Array2<f64>| (p[[0, 0]] - 1.0).powi(2) + (p[[0, 1]] + 2.0).powi(4),
            1e-4,
        );
        assert!(g.iter().all(|v| v.abs() < 1e-10));
    }
}
