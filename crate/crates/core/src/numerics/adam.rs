use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

/// Per-parameter-table Adam state with bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: DenseMatrix,
    v: DenseMatrix,
    step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Conventional defaults: beta1 0.9, beta2 0.999, eps 1e-8.
    pub fn new(rows: usize, cols: usize, lr: f64) -> Self {
        AdamState {
            m: DenseMatrix::zeros(rows, cols),
            v: DenseMatrix::zeros(rows, cols),
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update in place. The step counter advances by exactly 1.
pub fn adam_step(params: &mut DenseMatrix, grads: &DenseMatrix, state: &mut AdamState) -> Result<()> {
    if params.rows() != grads.rows()
        || params.cols() != grads.cols()
        || params.rows() != state.m.rows()
        || params.cols() != state.m.cols()
    {
        return Err(Error::InvalidDimension(format!(
            "adam_step params {}x{}, grads {}x{}, state {}x{}",
            params.rows(),
            params.cols(),
            grads.rows(),
            grads.cols(),
            state.m.rows(),
            state.m.cols()
        )));
    }
    grads.assert_finite("adam_step gradients")?;

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2) = (state.beta1, state.beta2);
    let (lr, eps) = (state.lr, state.eps);

    let mv = state.m.values_mut();
    let vv = state.v.values_mut();
    let pv = params.values_mut();
    let gv = grads.values();
    for i in 0..pv.len() {
        let g = gv[i];
        mv[i] = b1 * mv[i] + (1.0 - b1) * g;
        vv[i] = b2 * vv[i] + (1.0 - b2) * g * g;
        let m_hat = mv[i] / bc1;
        let v_hat = vv[i] / bc2;
        pv[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
