//! Adam, cosine decay and global-norm clipping.

use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam with one pair of moment buffers per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new<'a>(config: AdamConfig, shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let (m, v) = shapes
            .into_iter()
            .map(|s| (Tensor::zeros(s), Tensor::zeros(s)))
            .unzip();
        Self {
            config,
            step: 0,
            m,
            v,
        }
    }

    /// Applies one update at learning rate `lr`.
    ///
    /// A non-finite gradient rejects the whole step before anything changes;
    /// the error names the offending parameter by its index.
    pub fn update(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::dim("adam", "parameter, gradient and state counts differ"));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.m[i].shape() || g.shape() != p.shape() {
                return Err(Error::dim("adam", format!("shape of parameter {i}")));
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient {
                    param: i.to_string(),
                });
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = T::of(1.0 - c.beta1.powi(t));
        let bc2 = T::of(1.0 - c.beta2.powi(t));
        let (b1, b2, eps, lr) = (T::of(c.beta1), T::of(c.beta2), T::of(c.eps), T::of(lr));
        let one = T::one();
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let mh = *mv / bc1;
                let vh = *vv / bc2;
                *pv -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// `base · (1 + cos(π·step/total)) / 2`, and 0 past the end.
pub fn cosine_lr(step: u64, total_steps: u64, base_lr: f64) -> f64 {
    if step > total_steps {
        return 0.0;
    }
    if total_steps == 0 {
        return base_lr;
    }
    let frac = step as f64 / total_steps as f64;
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// Rescales all gradients together so their global L2 norm is at most
/// `max_norm`. Returns the factor applied and the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: f64) -> (f64, f64) {
    let norm = grads
        .iter()
        .map(|g| g.data().iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm <= max_norm || !norm.is_finite() {
        return (1.0, norm);
    }
    let scale = max_norm / norm;
    let s = T::of(scale);
    for g in grads.iter_mut() {
        g.data_mut().iter_mut().for_each(|x| *x *= s);
    }
    (scale, norm)
}
