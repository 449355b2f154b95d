//! Mini-batch training with Adam, fold splits and evaluation.

use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::autodiff::{Matrix, TensorError};
use crate::graph::Graph;
use crate::model::{ModelError, Prediction, TifModel};
use crate::params::{ParamGrads, ParamStore};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at epoch {epoch}: {reason}")]
    Divergence { epoch: usize, reason: String },
    #[error("empty training set")]
    Empty,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Option<Matrix>>,
    v: Vec<Option<Matrix>>,
}

impl Adam {
    pub fn new(lr: f64, params: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![None; params],
            v: vec![None; params],
        }
    }

    /// One bias-corrected update of every trainable parameter with a gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (i, p) in store.iter_mut().enumerate() {
            let Some(g) = grads.grads.get(i).and_then(|g| g.as_ref()) else {
                continue;
            };
            if !p.trainable {
                continue;
            }
            let m = self.m[i].get_or_insert_with(|| Matrix::zeros(g.raw_dim()));
            let v = self.v[i].get_or_insert_with(|| Matrix::zeros(g.raw_dim()));
            m.zip_mut_with(g, |m, g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            v.zip_mut_with(g, |v, g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            let (lr, eps) = (self.lr, self.eps);
            ndarray::Zip::from(&mut p.value).and(&*m).and(&*v).for_each(|w, m, v| {
                *w -= lr * (m / c1) / ((v / c2).sqrt() + eps);
            });
        }
    }
}

/// Graph indices per role for one cross-validation fold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// `test_fold` is held out, the next fold validates, the rest trains.
    pub fn from_folds(folds: &[usize], test_fold: usize, k: usize) -> Self {
        let val_fold = (test_fold + 1) % k;
        let mut s = Split {
            train: vec![],
            val: vec![],
            test: vec![],
        };
        for (i, &f) in folds.iter().enumerate() {
            if f == test_fold {
                s.test.push(i);
            } else if f == val_fold {
                s.val.push(i);
            } else {
                s.train.push(i);
            }
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalStats {
    pub loss: f64,
    pub accuracy: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean loss over the epoch's batches, before each step.
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainingReport {
    pub initial_train: EvalStats,
    pub initial_val: EvalStats,
    pub epochs: Vec<EpochStats>,
    pub wall_clock_secs: f64,
}

/// Predictions for `indices`, in order.
pub fn predict_all(model: &TifModel, graphs: &[Graph], indices: &[usize]) -> Result<Vec<Prediction>, ModelError> {
    indices.par_iter().map(|&i| model.predict(&graphs[i])).collect()
}

pub fn evaluate(model: &TifModel, graphs: &[Graph], indices: &[usize]) -> Result<EvalStats, ModelError> {
    if indices.is_empty() {
        return Ok(EvalStats {
            loss: f64::NAN,
            accuracy: f64::NAN,
            count: 0,
        });
    }
    let results: Vec<(f64, bool)> = indices
        .par_iter()
        .map(|&i| {
            let (loss, p) = model.loss(&graphs[i])?;
            Ok((loss, p.class == graphs[i].label))
        })
        .collect::<Result<_, ModelError>>()?;
    let n = results.len() as f64;
    Ok(EvalStats {
        loss: results.iter().map(|r| r.0).sum::<f64>() / n,
        accuracy: results.iter().filter(|r| r.1).count() as f64 / n,
        count: results.len(),
    })
}

fn diverged(epoch: usize, e: ModelError) -> TrainError {
    match e {
        ModelError::Tensor(TensorError::NonFinite(op)) => TrainError::Divergence {
            epoch,
            reason: format!("non-finite value in {op}"),
        },
        other => TrainError::Model(other),
    }
}

/// Trains in place with the model config's lr, batch size, epochs and seed.
/// Per-graph work runs on the current rayon pool; gradients are reduced in
/// batch order, so results do not depend on the thread count.
pub fn train(model: &mut TifModel, graphs: &[Graph], split: &Split) -> Result<TrainingReport, TrainError> {
    train_with(model, graphs, split, |_, _| {})
}

/// As [`train`], calling `on_epoch` with the updated model after every epoch.
pub fn train_with(
    model: &mut TifModel,
    graphs: &[Graph],
    split: &Split,
    mut on_epoch: impl FnMut(&TifModel, &EpochStats),
) -> Result<TrainingReport, TrainError> {
    if split.train.is_empty() {
        return Err(TrainError::Empty);
    }
    let start = Instant::now();
    let cfg = model.config.clone();
    let initial_train = evaluate(model, graphs, &split.train).map_err(|e| diverged(0, e))?;
    let initial_val = evaluate(model, graphs, &split.val).map_err(|e| diverged(0, e))?;
    let mut adam = Adam::new(cfg.lr, model.store.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_7a1f);
    let mut order = split.train.clone();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let steps = batch
                .par_iter()
                .map(|&i| model.loss_and_grad(&graphs[i]))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| diverged(epoch, e))?;
            let mut acc = ParamGrads::zeros_like(&model.store);
            let w = 1.0 / batch.len() as f64;
            for s in &steps {
                if !s.loss.is_finite() {
                    return Err(TrainError::Divergence {
                        epoch,
                        reason: format!("loss {}", s.loss),
                    });
                }
                loss_sum += s.loss;
                correct += s.correct as usize;
                acc.add_scaled(&s.grads, w);
            }
            adam.step(&mut model.store, &acc);
        }
        let val = evaluate(model, graphs, &split.val).map_err(|e| diverged(epoch, e))?;
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            train_accuracy: correct as f64 / order.len() as f64,
            val_loss: val.loss,
            val_accuracy: val.accuracy,
        };
        if !stats.train_loss.is_finite() {
            return Err(TrainError::Divergence {
                epoch,
                reason: "non-finite epoch loss".into(),
            });
        }
        info!(
            "epoch {epoch}: train loss {:.4} acc {:.3}, val loss {:.4} acc {:.3}",
            stats.train_loss, stats.train_accuracy, stats.val_loss, stats.val_accuracy
        );
        on_epoch(model, &stats);
        epochs.push(stats);
    }
    Ok(TrainingReport {
        initial_train,
        initial_val,
        epochs,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;
    use ndarray::array;

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        let id = store.add("w", array![[1.0, -2.0]], true);
        let frozen = store.add("f", array![[3.0]], false);
        let grads = ParamGrads {
            grads: vec![Some(array![[0.5, -4.0]]), Some(array![[1.0]])],
        };
        let mut adam = Adam::new(0.1, 2);
        adam.step(&mut store, &grads);
        let w = &store.get(id).value;
        assert!((w[[0, 0]] - 0.9).abs() < 1e-6);
        assert!((w[[0, 1]] + 1.9).abs() < 1e-6);
        assert_eq!(store.get(frozen).value[[0, 0]], 3.0);
    }

    #[test]
    fn adam_matches_reference_recurrence() {
        let mut store = ParamStore::new();
        let id = store.add("w", array![[0.3]], true);
        let mut adam = Adam::new(0.01, 1);
        let (mut w, mut m, mut v) = (0.3f64, 0.0f64, 0.0f64);
        for t in 1..=5 {
            let g = 2.0 * w;
            adam.step(
                &mut store,
                &ParamGrads {
                    grads: vec![Some(array![[g]])],
                },
            );
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w -= 0.01 * mh / (vh.sqrt() + 1e-8);
            assert!((store.get(id).value[[0, 0]] - w).abs() < 1e-15);
        }
    }

    #[test]
    fn split_roles() {
        let folds = vec![0, 1, 2, 0, 1, 2, 2];
        let s = Split::from_folds(&folds, 2, 3);
        assert_eq!(s.test, vec![2, 5, 6]);
        assert_eq!(s.val, vec![0, 3]);
        assert_eq!(s.train, vec![1, 4]);
    }
}
