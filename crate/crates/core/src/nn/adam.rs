use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{ParamStore, Scalar};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moment buffers + step counter. The learning rate lives here and is
/// overwritten each step by whatever schedule the trainer runs.
#[derive(Debug, Clone)]
pub struct AdamState<T: Scalar> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: ParamStore<T>,
    pub v: ParamStore<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>, config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// One bias-corrected Adam update. Every parameter must have a gradient entry
/// of matching shape — a missing one is an error, not a silent skip.
pub fn adam_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &ParamStore<T>,
    state: &mut AdamState<T>,
) -> Result<()> {
    for name in params.names() {
        if !grads.contains(name) {
            return Err(Error::UnknownParam(format!("adam_step: no gradient for '{name}'")));
        }
    }
    state.step += 1;
    let t = state.step;
    let c = state.config;
    let b1 = T::cast_from(c.beta1);
    let b2 = T::cast_from(c.beta2);
    let one = T::one();
    // bias corrections in f64: beta^t underflows gracefully there
    let corr1 = T::cast_from(1.0 - c.beta1.powi(t as i32));
    let corr2 = T::cast_from(1.0 - c.beta2.powi(t as i32));
    let lr = T::cast_from(c.lr);
    let eps = T::cast_from(c.eps);

    let mut m_iter = state.m.iter_mut();
    let mut v_iter = state.v.iter_mut();
    for (name, p) in params.iter_mut() {
        let g = grads.get(name)?;
        if g.shape != p.shape {
            return Err(Error::shape(
                "adam_step",
                format!("{name}: grad {:?} vs param {:?}", g.shape, p.shape),
            ));
        }
        let (mn, m) = m_iter.next().expect("moment store shape-matches params");
        let (vn, v) = v_iter.next().expect("moment store shape-matches params");
        debug_assert!(mn == name && vn == name);
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m.data[i] = b1 * m.data[i] + (one - b1) * gi;
            v.data[i] = b2 * v.data[i] + (one - b2) * gi * gi;
            let m_hat = m.data[i] / corr1;
            let v_hat = v.data[i] / corr2;
            p.data[i] = p.data[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Scale `grads` so its global L2 norm is at most `max_norm`. Returns the
/// pre-clip norm.
pub fn clip_global_norm<T: Scalar>(grads: &mut ParamStore<T>, max_norm: f64) -> f64 {
    let norm = grads.global_sq_norm().cast_f64().sqrt();
    if norm > max_norm && norm > 0.0 {
        grads.scale(T::cast_from(max_norm / norm));
    }
    norm
}
