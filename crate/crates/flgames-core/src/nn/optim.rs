//! Optimizers: bias-corrected Adam and plain SGD.

use serde::{Deserialize, Serialize};

use super::MlpParams;
use crate::error::Result;

/// Adam hyperparameters. Only the learning rate varies per experiment;
/// beta1/beta2/eps stay at the universal defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second-moment accumulators mirroring the parameter shapes, plus the
/// step counter used for bias correction.
#[derive(Debug, Clone)]
pub struct OptimState {
    m: MlpParams,
    v: MlpParams,
    pub t: u64,
    pub hyper: AdamHyper,
}

impl OptimState {
    pub fn new(template: &MlpParams, hyper: AdamHyper) -> Self {
        Self {
            m: template.zeros_like(),
            v: template.zeros_like(),
            t: 0,
            hyper,
        }
    }
}

/// One bias-corrected Adam step; increments `state.t` by exactly 1.
pub fn adam_step(params: &mut MlpParams, grads: &MlpParams, state: &mut OptimState) -> Result<()> {
    params.check_same_shape(grads)?;
    params.check_same_shape(&state.m)?;
    state.t += 1;
    let h = state.hyper;
    let bc1 = 1.0 - h.beta1.powi(state.t as i32);
    let bc2 = 1.0 - h.beta2.powi(state.t as i32);
    for ((pl, gl), (ml, vl)) in params
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(state.m.layers.iter_mut().zip(&mut state.v.layers))
    {
        adam_update(
            pl.weights.data_mut(),
            gl.weights.data(),
            ml.weights.data_mut(),
            vl.weights.data_mut(),
            h,
            bc1,
            bc2,
        );
        adam_update(&mut pl.bias, &gl.bias, &mut ml.bias, &mut vl.bias, h, bc1, bc2);
    }
    Ok(())
}

fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    h: AdamHyper,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g;
        v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
    }
}

/// `params -= lr * grads`, elementwise.
pub fn sgd_step(params: &mut MlpParams, grads: &MlpParams, lr: f64) -> Result<()> {
    params.add_scaled(grads, -lr)
}
