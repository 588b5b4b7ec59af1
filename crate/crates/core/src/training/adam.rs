use serde::{Deserialize, Serialize};

use super::bptt::{flatten_params, unflatten_params, Gradients};
use crate::dynamics::NetworkParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-2, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }
}

/// One bias-corrected Adam update of `theta` in place.
pub fn adam_update(state: &mut AdamState, theta: &mut [f64], grad: &[f64], cfg: &AdamConfig) {
    assert_eq!(theta.len(), grad.len(), "parameter and gradient lengths differ");
    assert_eq!(theta.len(), state.m.len(), "optimizer state has the wrong length");
    state.t += 1;
    let c1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let c2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for k in 0..theta.len() {
        let g = grad[k];
        state.m[k] = cfg.beta1 * state.m[k] + (1.0 - cfg.beta1) * g;
        state.v[k] = cfg.beta2 * state.v[k] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[k] / c1;
        let v_hat = state.v[k] / c2;
        theta[k] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Clip to zero from below; negative zero also lands on `+0.0`.
#[inline]
pub(crate) fn nonneg(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x
    }
}

/// Restore the parameter invariants: `V >= 0`, `tau >= 0`, and `W`, `V`
/// zero outside the mask.
pub fn project_params(p: &mut NetworkParams) {
    for t in &mut p.tau {
        *t = nonneg(*t);
    }
    for i in 0..p.n {
        for j in 0..p.n {
            if p.mask[i][j] {
                p.v[i][j] = nonneg(p.v[i][j]);
            } else {
                p.w[i][j] = 0.0;
                p.v[i][j] = 0.0;
            }
        }
    }
}

/// Adam on the network parameters followed by [`project_params`].
pub fn adam_step(state: &mut AdamState, params: &mut NetworkParams, grads: &Gradients, cfg: &AdamConfig) {
    let mut theta = flatten_params(params);
    adam_update(state, &mut theta, &grads.flatten(), cfg);
    unflatten_params(params, &theta);
    project_params(params);
}
