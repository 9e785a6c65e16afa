//! Adam with bias correction. Updates are elementwise and applied in
//! parameter order, so identical inputs give bitwise-identical outputs.

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    /// GAN-training defaults.
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }

    /// Plain classifier-training defaults.
    pub fn classifier() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates, parallel to a [`ParamSet`]'s tensors.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
    pub config: AdamConfig,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamSet<T>, config: AdamConfig) -> Self {
        AdamState {
            m: params.tensors().map(|t| Tensor::zeros(t.shape().to_vec())).collect(),
            v: params.tensors().map(|t| Tensor::zeros(t.shape().to_vec())).collect(),
            step: 0,
            config,
        }
    }
}

/// One Adam update. `grads` must be parallel to `params` in order and shape.
pub fn adam_step<T: Scalar>(
    params: &mut ParamSet<T>,
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Shape(format!(
            "adam_step arity: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let c = state.config;
    let b1 = T::from_f64(c.beta1);
    let b2 = T::from_f64(c.beta2);
    let one = T::one();
    // Bias corrections folded into a step-dependent learning rate scale.
    let corr1 = 1.0 - c.beta1.powi(state.step as i32);
    let corr2 = 1.0 - c.beta2.powi(state.step as i32);
    let lr_t = T::from_f64(c.lr / corr1);
    let corr2_sqrt_inv = T::from_f64(1.0 / corr2.sqrt());
    let eps = T::from_f64(c.epsilon);

    for (idx, (name, p)) in params.iter_mut().enumerate() {
        let g = &grads[idx];
        if g.shape() != p.shape() {
            return Err(Error::Shape(format!(
                "adam_step: gradient shape {:?} vs parameter {name} {:?}",
                g.shape(),
                p.shape()
            )));
        }
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        for ((pv, &gv), (mv, vv)) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
        {
            *mv = b1 * *mv + (one - b1) * gv;
            *vv = b2 * *vv + (one - b2) * gv * gv;
            let denom = (*vv).sqrt() * corr2_sqrt_inv + eps;
            *pv = *pv - lr_t * *mv / denom;
        }
    }
    Ok(())
}
