//! Adam with bias correction, one state per parameter tensor.

use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f32) -> Self {
        Self { lr, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    m: Vec<T>,
    v: Vec<T>,
    steps: u32,
}

impl<T: Float> Adam<T> {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self { config, m: vec![T::zero(); len], v: vec![T::zero(); len], steps: 0 }
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    /// One update of `params` in place; `params` and `grads` match `len`.
    pub fn step(&mut self, params: &mut [T], grads: &[T]) {
        debug_assert_eq!(params.len(), self.m.len());
        debug_assert_eq!(grads.len(), self.m.len());
        self.steps += 1;
        let c = |x: f32| T::from(x).unwrap();
        let (b1, b2) = (c(self.config.beta1), c(self.config.beta2));
        let one = T::one();
        let t = self.steps as i32;
        let bc1 = one - b1.powi(t);
        let bc2 = one - b2.powi(t);
        let lr = c(self.config.lr);
        let eps = c(self.config.eps);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *p = *p - lr * mhat / (vhat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut adam = Adam::<f64>::new(2, AdamConfig::with_lr(0.1));
        let mut p = [1.0, -1.0];
        adam.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut adam = Adam::<f32>::new(1, AdamConfig::default());
        let mut p = [0.25f32];
        adam.step(&mut p, &[0.0]);
        assert_eq!(p, [0.25]);
    }
}
