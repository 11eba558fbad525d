use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(params: &ParamStore, beta1: f64, beta2: f64) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            beta1,
            beta2,
            eps: 1e-8,
        }
    }
}

/// L2 norm over every gradient tensor together.
pub fn global_norm(grads: &[Tensor]) -> f64 {
    libm::sqrt(grads.iter().map(Tensor::l2_norm_sq).sum())
}

/// Rescales `grads` in place so their global norm is at most `clip`
/// (`clip == 0` leaves them alone). Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], clip: f64) -> f64 {
    let norm = global_norm(grads);
    if clip > 0.0 && norm > clip {
        let k = clip / norm;
        for g in grads.iter_mut() {
            g.scale_in_place(k);
        }
    }
    norm
}

/// One Adam update with bias correction, after optional global-norm
/// clipping. Returns the gradient norm before clipping.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &mut [Tensor],
    state: &mut OptimizerState,
    lr: f64,
    clip: f64,
) -> Result<f64> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Shape {
            op: "adam_step",
            left: alloc::vec![params.len(), state.m.len()],
            right: alloc::vec![grads.len()],
        });
    }
    for (id, g) in grads.iter().enumerate() {
        if g.shape() != params.get(id).shape() || state.m[id].shape() != g.shape() {
            return Err(Error::Shape {
                op: "adam_step",
                left: params.get(id).shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
    }
    let norm = clip_global_norm(grads, clip);
    state.step += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - libm::pow(b1, state.step as f64);
    let c2 = 1.0 - libm::pow(b2, state.step as f64);
    for (id, g) in grads.iter().enumerate() {
        let p = params.get_mut(id).data_mut();
        let m = state.m[id].data_mut();
        let v = state.v[id].data_mut();
        for k in 0..g.len() {
            let gk = g.data()[k];
            m[k] = b1 * m[k] + (1.0 - b1) * gk;
            v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            p[k] -= lr * m_hat / (libm::sqrt(v_hat) + state.eps);
        }
    }
    Ok(norm)
}
