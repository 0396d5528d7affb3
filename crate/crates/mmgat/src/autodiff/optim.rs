use thiserror::Error;

use super::tensor::ParamSet;
use crate::{real, Real};

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("gradient count {got} does not match parameter count {want}")]
    GradientCount { got: usize, want: usize },
    #[error("gradient shape mismatch for parameter `{0}`")]
    GradientShape(String),
}

/// Adam optimizer state: per-parameter first/second moments plus step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    pub lr: T,
}

impl<T: Real> AdamState<T> {
    /// Defaults β1=0.9, β2=0.999, ε=1e-8.
    pub fn new(params: &ParamSet<T>, lr: T) -> Self {
        AdamState {
            step: 0,
            m: params.entries().iter().map(|e| vec![T::zero(); e.data.len()]).collect(),
            v: params.entries().iter().map(|e| vec![T::zero(); e.data.len()]).collect(),
            beta1: real(0.9),
            beta2: real(0.999),
            epsilon: real(1e-8),
            lr,
        }
    }
}

/// One Adam update with bias correction. `grads` is aligned with the
/// parameter order of `params`.
pub fn adam_step<T: Real>(
    params: &mut ParamSet<T>,
    grads: &[Vec<T>],
    state: &mut AdamState<T>,
) -> Result<(), OptimError> {
    if grads.len() != params.len() {
        return Err(OptimError::GradientCount {
            got: grads.len(),
            want: params.len(),
        });
    }
    for (entry, g) in params.entries().iter().zip(grads) {
        if g.len() != entry.data.len() {
            return Err(OptimError::GradientShape(entry.name.clone()));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(OptimError::NonFiniteGradient(entry.name.clone()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = T::one() - state.beta1.powi(t);
    let bc2 = T::one() - state.beta2.powi(t);
    for (pi, (entry, g)) in params.entries_mut().iter_mut().zip(grads).enumerate() {
        let m = &mut state.m[pi];
        let v = &mut state.v[pi];
        for (i, (&gi, w)) in g.iter().zip(entry.data.iter_mut()).enumerate() {
            m[i] = state.beta1 * m[i] + (T::one() - state.beta1) * gi;
            v[i] = state.beta2 * v[i] + (T::one() - state.beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            *w = *w - state.lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

/// Multiplicative per-epoch learning-rate decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule<T> {
    pub base_lr: T,
    pub factor: T,
}

impl<T: Real> LrSchedule<T> {
    pub fn new(base_lr: T, factor: T) -> Self {
        assert!(factor > T::zero() && factor <= T::one(), "0 < factor <= 1");
        LrSchedule { base_lr, factor }
    }

    /// `base_lr · factor^epoch`
    pub fn lr_at_epoch(&self, epoch: u64) -> T {
        self.base_lr * self.factor.powi(epoch as i32)
    }
}
