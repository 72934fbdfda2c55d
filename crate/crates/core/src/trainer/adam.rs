//! ADAM with bias correction and decoupled weight decay.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("shape mismatch: {params} parameters, {grads} gradients, {state} state entries")]
pub struct ShapeError {
    pub params: usize,
    pub grads: usize,
    pub state: usize,
}

/// One ADAM update followed by `p ← p − lr·wd·p`.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
    config: &AdamConfig,
) -> Result<(), ShapeError> {
    if params.len() != grads.len()
        || params.len() != state.m.len()
        || state.m.len() != state.v.len()
    {
        return Err(ShapeError {
            params: params.len(),
            grads: grads.len(),
            state: state.m.len(),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    for k in 0..params.len() {
        let g = grads[k];
        state.m[k] = config.beta1 * state.m[k] + (1.0 - config.beta1) * g;
        state.v[k] = config.beta2 * state.v[k] + (1.0 - config.beta2) * g * g;
        let m_hat = state.m[k] / bc1;
        let v_hat = state.v[k] / bc2;
        params[k] -= lr * m_hat / (v_hat.sqrt() + config.eps);
        params[k] -= lr * weight_decay * params[k];
    }
    Ok(())
}
