//! Bias-corrected Adam.

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment accumulators for one parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One Adam update with bias correction; `t` is the 1-based step counter.
pub fn adam_step(value: &mut [f32], grad: &[f32], state: &mut AdamState, lr: f64, t: u64) {
    debug_assert_eq!(value.len(), grad.len());
    debug_assert_eq!(value.len(), state.m.len());
    debug_assert!(t >= 1);
    let bc1 = 1.0 - ADAM_BETA1.powi(t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(t as i32);
    for i in 0..value.len() {
        let g = grad[i] as f64;
        let m = ADAM_BETA1 * state.m[i] as f64 + (1.0 - ADAM_BETA1) * g;
        let v = ADAM_BETA2 * state.v[i] as f64 + (1.0 - ADAM_BETA2) * g * g;
        state.m[i] = m as f32;
        state.v[i] = v as f32;
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        value[i] = (value[i] as f64 - lr * m_hat / (v_hat.sqrt() + ADAM_EPS)) as f32;
    }
}
