//! Validation-driven training loop.
//!
//! Per epoch: shuffle the training set, run batches, evaluate validation
//! loss. The learning rate halves after every two consecutive epochs without
//! a validation improvement; training stops after six; the parameters of the
//! best validation epoch are restored at the end.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{LossKind, Tensor};

/// An epoch counts as not improving if it fails to beat the best validation
/// loss by at least this margin.
pub const IMPROVEMENT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub lr_halving_patience: usize,
    pub stop_patience: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub loss: LossKind,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(loss: LossKind, seed: u64) -> Self {
        TrainConfig {
            initial_lr: 0.001,
            lr_halving_patience: 2,
            stop_patience: 6,
            batch_size: 64,
            max_epochs: 200,
            loss,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.stop_patience < self.lr_halving_patience {
            return Err(Error::ShapeMismatch(format!(
                "stop patience {} below lr halving patience {}",
                self.stop_patience, self.lr_halving_patience
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.lr_halving_patience == 0 {
            return Err(Error::ShapeMismatch(
                "batch size, epochs, and patience must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub improved: bool,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// A model plus its data, seen by the training loop.
pub trait TrainTask {
    fn train_len(&self) -> usize;
    fn val_len(&self) -> usize;
    /// Forward + backward + optimizer step on one batch; returns the batch
    /// loss. `step` is the global 1-based Adam step counter.
    fn train_step(&mut self, batch: &[usize], lr: f64, step: u64) -> Result<f64>;
    fn validation_loss(&mut self) -> Result<f64>;
    fn snapshot(&self) -> Vec<Tensor>;
    fn restore(&mut self, snap: &[Tensor]);
}

pub fn training_loop<T: TrainTask>(task: &mut T, cfg: &TrainConfig) -> Result<TrainingLog> {
    cfg.validate()?;
    if task.train_len() == 0 {
        return Err(Error::EmptyDataset("training set"));
    }
    if task.val_len() == 0 {
        return Err(Error::EmptyDataset("validation set"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut indices: Vec<usize> = (0..task.train_len()).collect();
    let mut lr = cfg.initial_lr;
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_snap = task.snapshot();
    let mut stale_epochs = 0usize;
    let mut step = 0u64;
    let mut log = TrainingLog {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        stopped_early: false,
    };

    for epoch in 1..=cfg.max_epochs {
        indices.shuffle(&mut rng);
        let mut train_loss = 0.0f64;
        let mut seen = 0usize;
        for batch in indices.chunks(cfg.batch_size) {
            // a trailing singleton has no batch statistics; skip it
            if batch.len() == 1 && indices.len() > 1 {
                continue;
            }
            step += 1;
            train_loss += task.train_step(batch, lr, step)? * batch.len() as f64;
            seen += batch.len();
        }
        train_loss /= seen as f64;
        let val_loss = task.validation_loss()?;

        let improved = val_loss < best_val - IMPROVEMENT_TOL;
        if improved {
            best_val = val_loss;
            best_epoch = epoch;
            best_snap = task.snapshot();
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs % cfg.lr_halving_patience == 0 {
                lr /= 2.0;
            }
        }
        log.epochs.push(EpochStats {
            epoch,
            lr,
            train_loss,
            val_loss,
            improved,
        });
        if stale_epochs >= cfg.stop_patience {
            log.stopped_early = true;
            break;
        }
    }

    task.restore(&best_snap);
    log.best_epoch = best_epoch;
    log.best_val_loss = best_val;
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scripted task: validation losses come from a fixed sequence, training
    /// is a no-op. Lets the schedule be tested in isolation.
    struct Scripted {
        val_losses: Vec<f64>,
        cursor: usize,
    }

    impl TrainTask for Scripted {
        fn train_len(&self) -> usize {
            4
        }
        fn val_len(&self) -> usize {
            1
        }
        fn train_step(&mut self, _batch: &[usize], _lr: f64, _step: u64) -> Result<f64> {
            Ok(0.0)
        }
        fn validation_loss(&mut self) -> Result<f64> {
            let v = self.val_losses[self.cursor.min(self.val_losses.len() - 1)];
            self.cursor += 1;
            Ok(v)
        }
        fn snapshot(&self) -> Vec<Tensor> {
            Vec::new()
        }
        fn restore(&mut self, _snap: &[Tensor]) {}
    }

    fn run(vals: Vec<f64>, max_epochs: usize) -> TrainingLog {
        let mut task = Scripted {
            val_losses: vals,
            cursor: 0,
        };
        let mut cfg = TrainConfig::new(LossKind::Mse, 0);
        cfg.batch_size = 2;
        cfg.max_epochs = max_epochs;
        training_loop(&mut task, &cfg).unwrap()
    }

    #[test]
    fn decreasing_losses_keep_learning_rate() {
        let log = run((0..10).map(|i| 1.0 - 0.05 * i as f64).collect(), 10);
        assert!(log.epochs.iter().all(|e| e.lr == 0.001));
        assert!(!log.stopped_early);
        assert_eq!(log.best_epoch, 10);
    }

    #[test]
    fn flat_losses_halve_after_two_stale_epochs() {
        let log = run(vec![1.0; 10], 10);
        // epoch 1 sets the best; epochs 2 and 3 are stale; halving lands
        // after epoch 3
        assert_eq!(log.epochs[1].lr, 0.001);
        assert_eq!(log.epochs[2].lr, 0.0005);
        assert_eq!(log.epochs[4].lr, 0.00025);
    }

    #[test]
    fn six_stale_epochs_stop_training() {
        let log = run(vec![1.0; 20], 20);
        // stops at the epoch completing the 6th consecutive non-decrease
        assert_eq!(log.epochs.len(), 7);
        assert!(log.stopped_early);
        assert_eq!(log.best_epoch, 1);
    }

    #[test]
    fn best_epoch_tracks_minimum() {
        let log = run(vec![1.0, 0.4, 0.6, 0.39, 0.7, 0.7, 0.7], 7);
        assert_eq!(log.best_epoch, 4);
        assert!((log.best_val_loss - 0.39).abs() < 1e-12);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut task = Scripted {
            val_losses: vec![1.0],
            cursor: 0,
        };
        let mut cfg = TrainConfig::new(LossKind::Mse, 0);
        cfg.stop_patience = 1; // below halving patience
        assert!(training_loop(&mut task, &cfg).is_err());
    }
}
