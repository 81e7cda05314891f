//! Adam and the parameter-container abstraction it (and gradient checking) runs on.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// A fixed collection of dense tensors that can be walked element-wise.
///
/// `slices` and `slices_mut` must yield tensors in the same order, with the same
/// lengths, for any two containers of the same shape.
pub trait Parameters<T: Scalar>: Clone {
    fn slices(&self) -> Vec<&[T]>;
    fn slices_mut(&mut self) -> Vec<&mut [T]>;

    /// Same shapes, all zeros.
    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for s in z.slices_mut() {
            s.fill(T::zero());
        }
        z
    }

    fn n_values(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    fn flatten(&self) -> Vec<T> {
        self.slices().concat()
    }
}

impl<T: Scalar> Parameters<T> for Array2<T> {
    fn slices(&self) -> Vec<&[T]> {
        vec![self.as_slice().expect("standard layout")]
    }

    fn slices_mut(&mut self) -> Vec<&mut [T]> {
        vec![self.as_slice_mut().expect("standard layout")]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Bias-corrected first/second moment accumulators for one parameter container.
#[derive(Debug, Clone)]
pub struct AdamState<T, P> {
    config: AdamConfig,
    m: P,
    v: P,
    t: u64,
    _scalar: std::marker::PhantomData<T>,
}

impl<T: Scalar, P: Parameters<T>> AdamState<T, P> {
    pub fn new(config: AdamConfig, like: &P) -> Self {
        Self {
            config,
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
            _scalar: std::marker::PhantomData,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn first_moment(&self) -> &P {
        &self.m
    }

    pub fn second_moment(&self) -> &P {
        &self.v
    }

    /// One Adam update of `params` along `-grads`.
    pub fn step(&mut self, params: &mut P, grads: &P) {
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let b1 = T::of(beta1);
        let b2 = T::of(beta2);
        let one = T::one();
        let t = self.t as i32;
        let correction1 = T::of(1.0 - beta1.powi(t));
        let correction2 = T::of(1.0 - beta2.powi(t));
        let lr = T::of(lr);
        let eps = T::of(eps);
        let mut ms = self.m.slices_mut();
        let mut vs = self.v.slices_mut();
        let gs = grads.slices();
        for (((p, g), m), v) in params
            .slices_mut()
            .into_iter()
            .zip(gs)
            .zip(ms.iter_mut())
            .zip(vs.iter_mut())
        {
            assert_eq!(p.len(), g.len(), "gradient shape does not match parameters");
            for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / correction1;
                let v_hat = *v / correction2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = array![[1.0, -2.0], [0.5, 3.0]];
        let before = p.clone();
        let mut adam = AdamState::new(AdamConfig::with_lr(0.1), &p);
        adam.step(&mut p, &Array2::zeros((2, 2)));
        assert_eq!(p, before);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        // at t = 1: m_hat = g, v_hat = g^2, update = -lr g / (|g| + eps)
        let mut p: Array2<f64> = array![[0.0, 0.0, 0.0]];
        let g: Array2<f64> = array![[3.0, -0.02, 250.0]];
        let mut adam = AdamState::new(AdamConfig::with_lr(0.01), &p);
        adam.step(&mut p, &g);
        for (&x, &gi) in p.iter().zip(g.iter()) {
            let expected = -0.01 * gi / (gi.abs() + 1e-8);
            assert!((x - expected).abs() < 1e-15, "{x} vs {expected}");
            assert!((x + 0.01 * gi.signum()).abs() < 1e-6);
        }
    }

    #[test]
    fn opposite_gradients_mirror() {
        let mut p: Array2<f64> = array![[0.3, 0.3]];
        let mut adam = AdamState::new(AdamConfig::default(), &p);
        for _ in 0..5 {
            adam.step(&mut p, &array![[1.5, -1.5]]);
        }
        assert!(((p[[0, 0]] - 0.3) + (p[[0, 1]] - 0.3)).abs() < 1e-15);
    }

    #[test]
    fn works_in_f32() {
        let mut p = array![[1.0f32]];
        let mut adam = AdamState::new(AdamConfig::with_lr(0.1), &p);
        adam.step(&mut p, &array![[2.0f32]]);
        assert!((p[[0, 0]] - 0.9).abs() < 1e-6);
    }
}
