use serde::{Deserialize, Serialize};

use crate::net::NetworkWeights;
use crate::tensor::Scalar;
use crate::{Error, Result};

/// Adam hyperparameters. `beta1` plays the role of momentum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 0.01, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates mirroring the network parameters.
#[derive(Clone, Debug)]
pub struct AdamState<T = f32> {
    pub m: NetworkWeights<T>,
    pub v: NetworkWeights<T>,
    pub t: u64,
    pub config: AdamConfig,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(weights: &NetworkWeights<T>, config: AdamConfig) -> Self {
        AdamState { m: weights.zeros_like(), v: weights.zeros_like(), t: 0, config }
    }
}

/// One bias-corrected Adam update of a flat parameter slice at step `t`
/// (already incremented, so `t >= 1`).
pub fn adam_update<T: Scalar>(params: &mut [T], grads: &[T], m: &mut [T], v: &mut [T], t: u64, cfg: &AdamConfig) {
    let b1 = T::from_f64_lossy(cfg.beta1);
    let b2 = T::from_f64_lossy(cfg.beta2);
    let one = T::one();
    let bc1 = T::from_f64_lossy(1.0 - cfg.beta1.powf(t as f64));
    let bc2 = T::from_f64_lossy(1.0 - cfg.beta2.powf(t as f64));
    let lr = T::from_f64_lossy(cfg.lr);
    let eps = T::from_f64_lossy(cfg.eps);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Applies one Adam step to every parameter. Gradients are checked for
/// NaN/inf before anything is modified.
pub fn adam_step<T: Scalar>(
    weights: &mut NetworkWeights<T>,
    grads: &NetworkWeights<T>,
    state: &mut AdamState<T>,
) -> Result<()> {
    if weights.config() != grads.config() || weights.config() != state.m.config() {
        return Err(Error::shape("adam_step", "weights, gradients and moments differ in layout"));
    }
    if let Some(layer) = grads.first_non_finite() {
        return Err(Error::NonFinite { layer });
    }
    state.t += 1;
    let t = state.t;
    let cfg = state.config;
    let g = grads.tensors();
    let m = state.m.slices_mut();
    let v = state.v.slices_mut();
    for (((p, g), m), v) in weights.slices_mut().into_iter().zip(g).zip(m).zip(v) {
        adam_update(p, g.values, m, v, t, &cfg);
    }
    Ok(())
}
