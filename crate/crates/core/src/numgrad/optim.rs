use crate::error::{Error, Result};
use crate::Scalar;

/// AdamW moments and hyperparameters for one parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState<T> {
    pub first_moment: Vec<T>,
    pub second_moment: Vec<T>,
    pub step_count: u64,
    pub base_lr: T,
    pub weight_decay: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
}

impl<T: Scalar> OptimState<T> {
    /// Fresh state with β = (0.9, 0.999) and ε = 1e-8.
    pub fn new(num_params: usize, base_lr: f64, weight_decay: f64) -> Self {
        Self {
            first_moment: vec![T::zero(); num_params],
            second_moment: vec![T::zero(); num_params],
            step_count: 0,
            base_lr: T::of(base_lr),
            weight_decay: T::of(weight_decay),
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            epsilon: T::of(1e-8),
        }
    }
}

/// One AdamW update:
/// `p ← p − lr·(m̂/(√v̂ + ε) + weight_decay·p)`.
pub fn adamw_step<T: Scalar>(
    params: &mut [T],
    state: &mut OptimState<T>,
    grad: &[T],
    lr: T,
) -> Result<()> {
    if params.len() != grad.len() || params.len() != state.first_moment.len() {
        return Err(Error::Dimension {
            context: "optimizer buffers",
            expected: params.len(),
            got: grad.len().min(state.first_moment.len()),
        });
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            context: "gradient",
            index: i,
        });
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let one = T::one();
    let c1 = one / (one - b1.powi(t));
    let c2 = one / (one - b2.powi(t));
    let wd = state.weight_decay;
    let eps = state.epsilon;
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grad)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m * c1;
        let v_hat = *v * c2;
        *p -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * *p);
    }
    Ok(())
}
