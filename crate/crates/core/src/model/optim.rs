use crate::error::{Error, Result};
use crate::real::Real;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Epochs over which the learning rate decays linearly to 1% of its start.
pub const LR_HORIZON: usize = 100;
pub const LR_FINAL_FACTOR: f64 = 0.01;

/// `eta(e) = eta0 * (1 - 0.99 * min(e, 100) / 100)`.
pub fn lr_at(eta0: f64, epoch: usize) -> f64 {
    let e = epoch.min(LR_HORIZON) as f64;
    eta0 * (1.0 - (1.0 - LR_FINAL_FACTOR) * e / LR_HORIZON as f64)
}

fn check(params: usize, grads: usize) -> Result<()> {
    if params != grads {
        return Err(Error::ShapeMismatch(format!("{grads} gradients for {params} parameters")));
    }
    Ok(())
}

/// `w <- w - eta * g`, where `g` is already the batch-mean gradient.
pub fn sgd_step<T: Real>(params: &mut [T], grads: &[T], eta: f64) -> Result<()> {
    check(params.len(), grads.len())?;
    let eta = T::from_f64c(eta);
    for (p, &g) in params.iter_mut().zip(grads) {
        *p -= eta * g;
    }
    Ok(())
}

/// Adam moments and step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize) -> Self {
        AdamState { m: vec![T::zero(); len], v: vec![T::zero(); len], t: 0 }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step<T: Real>(params: &mut [T], grads: &[T], state: &mut AdamState<T>, eta: f64) -> Result<()> {
    check(params.len(), grads.len())?;
    check(params.len(), state.m.len())?;
    state.t += 1;
    let (b1, b2) = (T::from_f64c(ADAM_BETA1), T::from_f64c(ADAM_BETA2));
    let c1 = T::from_f64c(1.0 - ADAM_BETA1.powi(state.t as i32));
    let c2 = T::from_f64c(1.0 - ADAM_BETA2.powi(state.t as i32));
    let (eta, eps) = (T::from_f64c(eta), T::from_f64c(ADAM_EPS));
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (T::one() - b1) * g;
        state.v[i] = b2 * state.v[i] + (T::one() - b2) * g * g;
        let mhat = state.m[i] / c1;
        let vhat = state.v[i] / c2;
        params[i] -= eta * mhat / (vhat.sqrt() + eps);
    }
    Ok(())
}
