//! Adam optimizer over the model's flat parameter vector.

use crate::model::{param_count, shape_err, ModelError, ModelParams};
use crate::scalar::Scalar;
use crate::train::GradStore;

/// First/second moment estimates, stored flat in the fixed tensor-visit
/// order so updates are deterministic.
#[derive(Clone, Debug)]
pub struct AdamState<S> {
    step: u64,
    m: Vec<S>,
    v: Vec<S>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<S: Scalar> AdamState<S> {
    /// Conventional defaults: β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    pub fn new(n_params: usize) -> Self {
        AdamState {
            step: 0,
            m: vec![S::zero(); n_params],
            v: vec![S::zero(); n_params],
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn for_params(params: &ModelParams<S>) -> Self {
        Self::new(param_count(params))
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn n_params(&self) -> usize {
        self.m.len()
    }
}

/// One bias-corrected Adam update:
/// `m ← β₁m + (1−β₁)g`, `v ← β₂v + (1−β₂)g²`,
/// `θ ← θ − lr·(m/(1−β₁ᵗ)) / (√(v/(1−β₂ᵗ)) + ε)`.
/// Tensors update in the fixed visit order.
pub fn adam_step<S: Scalar>(
    params: &mut ModelParams<S>,
    grads: &GradStore<S>,
    state: &mut AdamState<S>,
    lr: S,
) -> Result<(), ModelError> {
    let mut g: Vec<S> = Vec::with_capacity(state.m.len());
    grads.for_each(&mut |_, data, _| g.extend_from_slice(data));
    if g.len() != state.m.len() || param_count(params) != state.m.len() {
        return Err(shape_err(
            "adam_step",
            format!(
                "optimizer holds {} parameters, gradients {}, model {}",
                state.m.len(),
                g.len(),
                param_count(params)
            ),
        ));
    }
    state.step += 1;
    let t = state.step as f64;
    let b1 = S::from_real(state.beta1);
    let b2 = S::from_real(state.beta2);
    let eps = S::from_real(state.eps);
    let bc1 = S::from_real(1.0 - state.beta1.powf(t));
    let bc2 = S::from_real(1.0 - state.beta2.powf(t));
    let one = S::one();
    let (m, v) = (&mut state.m, &mut state.v);
    let mut cursor = 0usize;
    params.visit_trainable_mut(&mut |_, data, _| {
        for x in data.iter_mut() {
            let gi = g[cursor];
            let mi = &mut m[cursor];
            let vi = &mut v[cursor];
            *mi = b1 * *mi + (one - b1) * gi;
            *vi = b2 * *vi + (one - b2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *x -= lr * m_hat / (v_hat.sqrt() + eps);
            cursor += 1;
        }
    });
    debug_assert_eq!(cursor, g.len());
    Ok(())
}
