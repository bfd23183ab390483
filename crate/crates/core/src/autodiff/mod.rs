//! Dense arrays, reverse-mode differentiation and the Adam optimizer.

mod array;
mod check;
mod optim;
mod tape;

pub use array::Array;
pub use check::{finite_diff_check, grad};
pub use optim::{adam_step, AdamState};
pub use tape::{Gradients, SparseMatrix, Tape, Var, MASK_SENTINEL};

pub(crate) use array::sq_dist;

use rand::{Rng, RngCore};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AdError {
    #[error("array shape {shape:?} does not hold {len} values")]
    BadShape { shape: [usize; 2], len: usize },
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: [usize; 2],
        right: [usize; 2],
    },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("gradient requested of a non-scalar output with shape {shape:?}")]
    NonScalar { shape: [usize; 2] },
    #[error("index {index} out of range {bound} in {op}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("invalid argument to {op}: {reason}")]
    InvalidArgument {
        op: &'static str,
        reason: &'static str,
    },
}

/// Inverted dropout: in training mode each entry is zeroed with probability
/// `rate` and survivors are scaled by `1 / (1 - rate)`. In eval mode, or with
/// `rate == 0`, the input is returned unchanged.
pub fn dropout(
    tape: &mut Tape,
    x: Var,
    rate: f64,
    rng: &mut dyn RngCore,
    training: bool,
) -> Result<Var, AdError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(AdError::InvalidArgument {
            op: "dropout",
            reason: "rate must lie in [0, 1)",
        });
    }
    if !training || rate == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - rate);
    let [r, c] = tape.value(x).shape();
    let mask = Array::from_fn(r, c, |_, _| {
        if rng.random::<f64>() < rate {
            0.0
        } else {
            keep
        }
    });
    tape.mul_const(x, mask)
}
