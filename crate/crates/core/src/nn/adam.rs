use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment estimates for every parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, params: &[Tensor<T>]) -> Self {
        AdamState {
            config,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update: `θ ← θ − lr · m̂ / (√v̂ + ε)`.
pub fn adam_step<T: Scalar>(params: &mut [Tensor<T>], grads: &[Tensor<T>], state: &mut AdamState<T>) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(format!(
            "adam: {} params, {} grads, {} moment tensors",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::shape(format!("adam: parameter {:?} vs gradient {:?}", p.shape(), g.shape())));
        }
    }
    state.t += 1;
    let c = state.config;
    let t = state.t as i32;
    let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
    let (one_b1, one_b2) = (T::from_f64(1.0 - c.beta1), T::from_f64(1.0 - c.beta2));
    let corr1 = T::from_f64(1.0 / (1.0 - c.beta1.powi(t)));
    let corr2 = T::from_f64(1.0 / (1.0 - c.beta2.powi(t)));
    let (lr, eps) = (T::from_f64(c.lr), T::from_f64(c.eps));
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mv = b1 * *mv + one_b1 * gv;
            *vv = b2 * *vv + one_b2 * gv * gv;
            let m_hat = *mv * corr1;
            let v_hat = *vv * corr2;
            *pv = *pv - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
