//! Loss functions: value plus gradient with respect to the prediction.

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Probabilities are clamped to [CLAMP, 1 - CLAMP] inside the logs.
const CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    BinaryCrossEntropy,
    CategoricalCrossEntropy,
}

/// Evaluates the loss and its gradient; the value accumulates in 64-bit.
///
/// MSE and binary cross-entropy average over every element; categorical
/// cross-entropy treats rows of `[batch, classes]` as distributions and
/// averages over the batch.
pub fn loss(prediction: &Tensor, target: &Tensor, kind: LossKind) -> Result<(f64, Tensor)> {
    if prediction.shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!(
            "loss prediction {:?} vs target {:?}",
            prediction.shape(),
            target.shape()
        )));
    }
    let p = prediction.data();
    let t = target.data();
    let mut grad = Tensor::zeros(prediction.shape().to_vec());
    let g = grad.data_mut();
    let value = match kind {
        LossKind::Mse => {
            let inv = 1.0 / p.len() as f64;
            let mut acc = 0.0f64;
            for i in 0..p.len() {
                let r = p[i] as f64 - t[i] as f64;
                acc += r * r;
                g[i] = (2.0 * r * inv) as f32;
            }
            acc * inv
        }
        LossKind::BinaryCrossEntropy => {
            // the clamp stays inside the division: saturated predictions keep
            // a bounded, non-vanishing gradient instead of going silent
            let inv = 1.0 / p.len() as f64;
            let mut acc = 0.0f64;
            for i in 0..p.len() {
                let tv = t[i] as f64;
                let pc = (p[i] as f64).clamp(CLAMP, 1.0 - CLAMP);
                acc -= tv * pc.ln() + (1.0 - tv) * (1.0 - pc).ln();
                g[i] = ((-tv / pc + (1.0 - tv) / (1.0 - pc)) * inv) as f32;
            }
            acc * inv
        }
        LossKind::CategoricalCrossEntropy => {
            if prediction.shape().len() != 2 {
                return Err(Error::ShapeMismatch(format!(
                    "categorical cross-entropy expects [batch, classes], got {:?}",
                    prediction.shape()
                )));
            }
            let n = prediction.dim(0);
            let inv = 1.0 / n as f64;
            let mut acc = 0.0f64;
            for i in 0..p.len() {
                let tv = t[i] as f64;
                if tv == 0.0 {
                    continue;
                }
                let pc = (p[i] as f64).max(CLAMP);
                acc -= tv * pc.ln();
                g[i] = (-tv / pc * inv) as f32;
            }
            acc * inv
        }
    };
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Vec<usize>, data: Vec<f32>) -> Tensor {
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn mse_of_identical_tensors_is_zero() {
        let x = t(vec![2, 3], vec![0.1, 0.2, 0.3, -0.4, 0.5, 1.0]);
        let (v, g) = loss(&x, &x, LossKind::Mse).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bce_at_half_is_ln_two() {
        let p = t(vec![1, 1], vec![0.5]);
        let y = t(vec![1, 1], vec![1.0]);
        let (v, _) = loss(&p, &y, LossKind::BinaryCrossEntropy).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-6, "got {v}");
    }

    #[test]
    fn cce_of_uniform_four_is_ln_four() {
        let p = t(vec![1, 4], vec![0.25; 4]);
        let y = t(vec![1, 4], vec![0.0, 1.0, 0.0, 0.0]);
        let (v, _) = loss(&p, &y, LossKind::CategoricalCrossEntropy).unwrap();
        assert!((v - 4.0f64.ln()).abs() < 1e-6, "got {v}");
    }

    #[test]
    fn losses_are_non_negative() {
        let p = t(vec![2, 2], vec![0.9, 0.1, 0.2, 0.8]);
        let y = t(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        for kind in [
            LossKind::Mse,
            LossKind::BinaryCrossEntropy,
            LossKind::CategoricalCrossEntropy,
        ] {
            let (v, _) = loss(&p, &y, kind).unwrap();
            assert!(v >= 0.0);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let p = t(vec![1, 2], vec![0.5, 0.5]);
        let y = t(vec![2, 1], vec![1.0, 0.0]);
        assert!(matches!(
            loss(&p, &y, LossKind::Mse),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
