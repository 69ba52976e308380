use serde::{Deserialize, Serialize};

use super::dense::DenseMatrix;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moment buffers for an ordered list of parameter tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub first_moment: Vec<DenseMatrix>,
    pub second_moment: Vec<DenseMatrix>,
}

impl AdamState {
    pub fn for_shapes(shapes: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let zeros: Vec<DenseMatrix> = shapes
            .into_iter()
            .map(|(r, c)| DenseMatrix::zeros(r, c))
            .collect();
        Self {
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }
}

/// One Adam update with bias correction. Weight decay is added to the
/// gradient as an L2 term before the moments are updated.
///
/// All gradients are checked before anything is mutated, so a non-finite
/// gradient leaves parameters and state untouched.
pub fn adam_step(
    params: &mut [&mut DenseMatrix],
    grads: &[DenseMatrix],
    state: &mut AdamState,
    learning_rate: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::State(format!(
            "adam: {} params, {} grads, {} moment buffers",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.first_moment[i].shape() {
            return Err(Error::Shape {
                op: "adam_step",
                left: p.shape(),
                right: g.shape(),
            });
        }
        g.validate_finite(&format!("gradient of parameter {i}"))?;
    }
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - ADAM_BETA1.powi(t);
    let bias2 = 1.0 - ADAM_BETA2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].as_slice();
        let m = state.first_moment[i].as_mut_slice();
        let v = state.second_moment[i].as_mut_slice();
        for (j, w) in p.as_mut_slice().iter_mut().enumerate() {
            let grad = g[j] + weight_decay * *w;
            m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * grad;
            v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * grad * grad;
            let m_hat = m[j] / bias1;
            let v_hat = v[j] / bias2;
            *w -= learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}
