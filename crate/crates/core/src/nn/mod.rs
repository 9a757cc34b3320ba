//! Minimal reverse-mode differentiable engine.
//!
//! Exactly the layers, losses, optimizer, and schedule the segment models
//! need: 1-d convolution, batch normalization, ReLU, max pooling, nearest
//! upsampling, dense, sigmoid, softmax; MSE / binary / categorical
//! cross-entropy; Adam; and a validation-driven training loop with learning
//! rate halving and early stopping.
//!
//! Data is stored as 32-bit floats; reductions (dot products, statistics,
//! losses) accumulate in 64-bit.

pub mod gradcheck;
mod layers;
mod loss;
mod optim;
mod train;

pub use layers::{Layer, LayerSpec, Mode, Network, PaddingSpec};
pub use loss::{loss, LossKind};
pub use optim::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use train::{training_loop, EpochStats, TrainConfig, TrainTask, TrainingLog};

use crate::error::{Error, Result};

/// Dense row-major tensor of 32-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    pub requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {:?} holds {} elements, data has {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
            requires_grad: false,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dim(&self, i: usize) -> usize {
        self.shape[i]
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Tensor> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A trainable tensor with its gradient accumulator and Adam state.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Tensor,
    pub state: AdamState,
}

impl Parameter {
    pub fn new(mut value: Tensor) -> Self {
        value.requires_grad = true;
        let grad = Tensor::zeros(value.shape().to_vec());
        let state = AdamState::new(value.numel());
        Parameter { value, grad, state }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
    }

    /// One Adam update; frozen parameters (requires_grad == false) are left
    /// untouched.
    pub fn step(&mut self, lr: f64, t: u64) {
        if !self.value.requires_grad {
            return;
        }
        adam_step(
            self.value.data_mut(),
            self.grad.data(),
            &mut self.state,
            lr,
            t,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_shape_must_match_data() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::new(vec![2, 3], vec![0.0; 5]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn frozen_parameter_ignores_step() {
        let mut p = Parameter::new(Tensor::new(vec![2], vec![1.0, -1.0]).unwrap());
        p.grad.data_mut().copy_from_slice(&[0.5, 0.5]);
        p.value.requires_grad = false;
        p.step(0.1, 1);
        assert_eq!(p.value.data(), &[1.0, -1.0]);
        p.value.requires_grad = true;
        p.step(0.1, 1);
        assert_ne!(p.value.data(), &[1.0, -1.0]);
    }
}
