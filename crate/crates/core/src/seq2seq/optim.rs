use super::{Gradients, Seq2SeqParams};
use crate::error::{Error, Result};

pub fn global_norm(grads: &Gradients) -> f64 {
    grads
        .tensors()
        .iter()
        .map(|(_, t)| t.iter().map(|g| g * g).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Plain SGD after rescaling the gradient to global norm at most
/// `clip_norm`. Returns the pre-clipping norm.
pub fn sgd_update(params: &mut Seq2SeqParams, grads: &Gradients, step_size: f64, clip_norm: f64) -> Result<f64> {
    if step_size.is_nan() || step_size <= 0.0 {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {step_size}")));
    }
    let norm = global_norm(grads);
    if !norm.is_finite() {
        return Err(Error::NonFiniteGradient);
    }
    if norm == 0.0 {
        return Ok(0.0);
    }
    let factor = if norm > clip_norm { clip_norm / norm } else { 1.0 };
    params.scaled_add(-step_size * factor, grads);
    Ok(norm)
}
