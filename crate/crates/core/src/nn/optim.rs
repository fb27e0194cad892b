//! SGD and Adam. Both take parameters and gradients by reference and return
//! a fresh set, so a failed update never leaves a half-written model.

use crate::nn::params::ParamSet;
use crate::Result;

pub fn sgd_step(params: &ParamSet, grads: &ParamSet, lr: f64) -> Result<ParamSet> {
    params.validate_shapes(grads)?;
    let mut out = params.clone();
    out.accumulate(grads, -lr)?;
    out.validate_finite()?;
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: ParamSet,
    pub v: ParamSet,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

pub fn adam_step(
    params: &ParamSet,
    grads: &ParamSet,
    state: &mut AdamState,
    hp: &AdamParams,
) -> Result<ParamSet> {
    params.validate_shapes(grads)?;
    params.validate_shapes(&state.m)?;
    state.t += 1;
    let t = state.t as f64;
    let bc1 = 1.0 - hp.beta1.powf(t);
    let bc2 = 1.0 - hp.beta2.powf(t);
    let mut out = params.clone();
    for (name, p) in out.iter_mut() {
        let g = grads.get(name)?;
        let m = state.m.get_mut(name)?;
        for (mk, gk) in m.data_mut().iter_mut().zip(g.data()) {
            *mk = hp.beta1 * *mk + (1.0 - hp.beta1) * gk;
        }
        let v = state.v.get_mut(name)?;
        for (vk, gk) in v.data_mut().iter_mut().zip(g.data()) {
            *vk = hp.beta2 * *vk + (1.0 - hp.beta2) * gk * gk;
        }
        let m = state.m.get(name)?;
        let v = state.v.get(name)?;
        for ((pk, mk), vk) in p.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
            let m_hat = mk / bc1;
            let v_hat = vk / bc2;
            *pk -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
        }
    }
    out.validate_finite()?;
    Ok(out)
}
