//! Weighted binary cross-entropy over speaking scores.

use crate::model::{shape_err, ModelError};
use crate::scalar::Scalar;

/// Mean binary cross-entropy with a positive-class weight:
/// `L = −(1/N) Σ [w·y·ln s + (1−y)·ln(1−s)]`.
///
/// Returns the loss together with its gradient **with respect to the
/// pre-sigmoid logits** — `dL/dz_i = (s_i·((1−y_i) + w·y_i) − w·y_i)/N` —
/// which is the numerically stable quantity the backward pass consumes
/// (no division by s·(1−s)).
pub fn bce_loss<S: Scalar>(
    scores: &[S],
    labels: &[u8],
    pos_weight: S,
) -> Result<(S, Vec<S>), ModelError> {
    if scores.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    if scores.len() != labels.len() {
        return Err(shape_err(
            "bce_loss",
            format!("{} scores vs {} labels", scores.len(), labels.len()),
        ));
    }
    let (zero, one) = (S::zero(), S::one());
    let eps = S::epsilon();
    let inv_n = one / S::from_real(scores.len() as f64);
    let mut loss = zero;
    let mut dlogits = Vec::with_capacity(scores.len());
    for (i, (&raw, &label)) in scores.iter().zip(labels).enumerate() {
        if !raw.is_finite() {
            return Err(shape_err("bce_loss", format!("score {i} is not finite")));
        }
        if label > 1 {
            return Err(shape_err("bce_loss", format!("label {i} is {label}, expected 0 or 1")));
        }
        // The forward pass already keeps scores strictly inside (0,1); clamp
        // again so externally supplied scores cannot produce ±inf logs.
        let s = raw.max(eps).min(one - eps);
        let y = if label == 1 { one } else { zero };
        loss -= pos_weight * y * s.ln() + (one - y) * (one - s).ln();
        dlogits.push((s * ((one - y) + pos_weight * y) - pos_weight * y) * inv_n);
    }
    Ok((loss * inv_n, dlogits))
}
