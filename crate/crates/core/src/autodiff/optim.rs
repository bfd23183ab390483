use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{AdError, Array};
use crate::math;

/// Adam moments and hyperparameters.
///
/// Weight decay is L2 regularization folded into the gradient
/// (`g <- g + weight_decay * theta`), not the decoupled AdamW form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub m: Vec<Array>,
    pub v: Vec<Array>,
}

impl AdamState {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
///
/// Moment buffers are allocated on the first call.
pub fn adam_step(
    params: &mut [Array],
    grads: &[Array],
    state: &mut AdamState,
) -> Result<(), AdError> {
    if params.len() != grads.len() {
        return Err(AdError::InvalidArgument {
            op: "adam_step",
            reason: "parameter and gradient counts differ",
        });
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(AdError::ShapeMismatch {
                op: "adam_step",
                left: p.shape(),
                right: g.shape(),
            });
        }
    }
    if state.m.is_empty() {
        state.m = params
            .iter()
            .map(|p| Array::zeros(p.rows(), p.cols()))
            .collect();
        state.v = state.m.clone();
    }
    if state.m.len() != params.len()
        || state
            .m
            .iter()
            .zip(params.iter())
            .any(|(m, p)| m.shape() != p.shape())
    {
        return Err(AdError::InvalidArgument {
            op: "adam_step",
            reason: "optimizer moments do not match parameters",
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - math::powi(state.beta1, t);
    let bc2 = 1.0 - math::powi(state.beta2, t);
    let (b1, b2, lr, eps, wd) = (
        state.beta1,
        state.beta2,
        state.lr,
        state.eps,
        state.weight_decay,
    );
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let pd = p.data_mut();
        for i in 0..pd.len() {
            let gi = g.data()[i] + wd * pd[i];
            let mi = b1 * m.data()[i] + (1.0 - b1) * gi;
            let vi = b2 * v.data()[i] + (1.0 - b2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let mhat = mi / bc1;
            let vhat = vi / bc2;
            pd[i] -= lr * mhat / (math::sqrt(vhat) + eps);
        }
    }
    Ok(())
}
