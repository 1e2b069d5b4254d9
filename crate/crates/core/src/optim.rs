//! Adam optimizer with the step-decay learning-rate schedule used by the
//! training loop: 1e-4 for the first 80% of epochs, 1e-5 afterwards.

use crate::error::ShapeError;
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Learning-rate schedule: `initial` until 80% of `total_epochs` have passed,
/// then `initial * 0.1`.
#[derive(Debug, Clone, Copy)]
pub struct LrSchedule {
    pub initial: f64,
    pub total_epochs: usize,
}

impl LrSchedule {
    pub fn new(total_epochs: usize) -> Self {
        Self {
            initial: 1e-4,
            total_epochs,
        }
    }

    /// Learning rate for a zero-based epoch index.
    pub fn at_epoch(&self, epoch: usize) -> f64 {
        let cutoff = (0.8 * self.total_epochs as f64).floor() as usize;
        if epoch < cutoff {
            self.initial
        } else {
            self.initial * 0.1
        }
    }
}

/// Per-parameter first/second moment estimates and a shared step counter.
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: usize,
    pub schedule: LrSchedule,
}

impl AdamState {
    pub fn new(params: &[Tensor], schedule: LrSchedule) -> Self {
        Self {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
            schedule,
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }
}

/// One Adam update in place. `params` and `grads` must align with the state.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [Tensor],
    grads: &[Tensor],
    lr: f64,
) -> Result<(), ShapeError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(ShapeError::Contract(format!(
            "adam_step alignment: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - ADAM_BETA1.powf(t);
    let bc2 = 1.0 - ADAM_BETA2.powf(t);
    for i in 0..params.len() {
        if params[i].shape() != grads[i].shape() {
            return Err(ShapeError::Mismatch {
                op: "adam_step",
                lhs: params[i].shape().to_vec(),
                rhs: grads[i].shape().to_vec(),
            });
        }
        let n = params[i].len();
        let mut m_new = Vec::with_capacity(n);
        let mut v_new = Vec::with_capacity(n);
        let mut p_new = Vec::with_capacity(n);
        {
            let p = params[i].data();
            let g = grads[i].data();
            let m = state.m[i].data();
            let v = state.v[i].data();
            for j in 0..n {
                let mj = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g[j];
                let vj = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g[j] * g[j];
                let m_hat = mj / bc1;
                let v_hat = vj / bc2;
                m_new.push(mj);
                v_new.push(vj);
                p_new.push(p[j] - lr * m_hat / (v_hat.sqrt() + ADAM_EPS));
            }
        }
        state.m[i] = Tensor::from_vec(params[i].shape(), m_new);
        state.v[i] = Tensor::from_vec(params[i].shape(), v_new);
        params[i] = Tensor::from_vec(params[i].shape(), p_new);
    }
    Ok(())
}
