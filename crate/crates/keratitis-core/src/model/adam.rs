//! Adam optimizer with bias correction.
//!
//! Weight decay is added to the raw gradient before the moment updates, so a
//! frozen parameter range must be excluded from the step rather than given a
//! zero gradient.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

/// Optimizer state: first/second moment accumulators and the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over the full parameter vector.
    pub fn apply(&mut self, params: &mut [f64], grads: &[f64], lr: f64, weight_decay: f64) {
        let range = 0..params.len();
        self.apply_range(params, grads, lr, weight_decay, range);
    }

    /// One update restricted to `active`; parameters outside stay bit-exact.
    pub fn apply_range(
        &mut self,
        params: &mut [f64],
        grads: &[f64],
        lr: f64,
        weight_decay: f64,
        active: Range<usize>,
    ) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.step += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.step as f64);
        for i in active {
            let g = grads[i] + weight_decay * params[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (libm::sqrt(v_hat) + self.epsilon);
        }
    }
}

/// Standard Adam step over all parameters.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64, weight_decay: f64) {
    state.apply(params, grads, lr, weight_decay);
}
