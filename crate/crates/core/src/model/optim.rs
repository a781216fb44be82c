use serde::{Deserialize, Serialize};

use super::tensor::Params;

pub const BASE_LR: f64 = 1e-3;
pub const LR_DECAY: f64 = 0.99;

/// Exponentially decayed learning rate for epoch `t` (0-based).
pub fn lr_at(t: u32) -> f64 {
    lr_schedule(BASE_LR, LR_DECAY, t)
}

pub fn lr_schedule(lr0: f64, decay: f64, t: u32) -> f64 {
    lr0 * decay.powf(t as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Params,
    pub v: Params,
}

impl AdamState {
    pub fn new(params: &Params, config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            m: Params::zeros_like(params),
            v: Params::zeros_like(params),
        }
    }
}

/// One bias-corrected Adam update, elementwise over every tensor.
pub fn adam_step(params: &mut Params, grads: &Params, state: &mut AdamState, lr: f64) {
    assert!(params.same_layout(grads), "gradient layout differs from parameters");
    state.step += 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let c1 = 1.0 - beta1.powi(state.step as i32);
    let c2 = 1.0 - beta2.powi(state.step as i32);
    for (((p, g), m), v) in params
        .tensors
        .iter_mut()
        .zip(&grads.tensors)
        .zip(state.m.tensors.iter_mut())
        .zip(state.v.tensors.iter_mut())
    {
        for (((p, g), m), v) in
            p.1.data
                .iter_mut()
                .zip(&g.1.data)
                .zip(m.1.data.iter_mut())
                .zip(v.1.data.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
