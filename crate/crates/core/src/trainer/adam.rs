use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn check(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Training(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update at learning rate `lr`. A non-finite
/// gradient aborts the step with params and state untouched.
pub fn adam_step<T: Real>(
    params: &mut [T],
    grads: &[T],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::Training(format!(
            "gradient length {} does not match {} parameters",
            grads.len(),
            params.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Training(format!("non-finite gradient at parameter {i}")));
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let c1 = T::of(1.0 / (1.0 - cfg.beta1.powi(t)));
    let c2 = T::of(1.0 / (1.0 - cfg.beta2.powi(t)));
    let (lr, eps) = (T::of(lr), T::of(cfg.eps));
    let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + one_b1 * g;
        *v = b2 * *v + one_b2 * g * g;
        *p -= lr * (*m * c1) / ((*v * c2).sqrt() + eps);
    }
    Ok(())
}
