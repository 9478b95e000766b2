//! Small dense linear algebra, losses, parameters and gradient checking.
//!
//! Everything here works on `f64` and caller-owned buffers. The networks built
//! on top are a handful of affine layers, so gradients are written out by hand
//! per layer and verified against central finite differences.

mod gradcheck;
mod matrix;
mod ops;
mod params;

pub use gradcheck::{grad_check, relative_error, Differentiable, GradCheckReport};
pub use matrix::{affine_forward, DenseMatrix};
pub use ops::{
    argmax, cross_entropy, dot, entropy, l2_norm, log_softmax, softmax, PROB_FLOOR,
};
pub use params::{AdamConfig, ParamId, ParamSet};

pub(crate) fn ensure_finite(op: &'static str, values: &[f64]) -> crate::Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(crate::Error::numeric(format!(
            "{op}: non-finite value {} at position {i}",
            values[i]
        ))),
    }
}
