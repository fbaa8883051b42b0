use serde::{Deserialize, Serialize};

use super::real::Real;
use super::NetError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment estimates, shaped like the parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Real> AdamState<T> {
    pub fn new(n: usize, config: AdamConfig) -> Self {
        Self { config, step: 0, m: vec![T::zero(); n], v: vec![T::zero(); n] }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step<T: Real>(state: &mut AdamState<T>, params: &mut [T], grads: &[T]) -> Result<(), NetError> {
    let n = state.m.len();
    if params.len() != n {
        return Err(NetError::ShapeMismatch { expected: n, got: params.len() });
    }
    if grads.len() != n {
        return Err(NetError::ShapeMismatch { expected: n, got: grads.len() });
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
    // fold both bias corrections into the step size
    let step = T::lit(c.lr * (1.0 - c.beta2.powi(t)).sqrt() / (1.0 - c.beta1.powi(t)));
    let eps = T::lit(c.eps * (1.0 - c.beta2.powi(t)).sqrt());
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(state.m.iter_mut()).zip(state.v.iter_mut()) {
        *m = b1 * *m + (T::one() - b1) * g;
        *v = b2 * *v + (T::one() - b2) * g * g;
        *p -= step * *m / (v.sqrt() + eps);
    }
    Ok(())
}
