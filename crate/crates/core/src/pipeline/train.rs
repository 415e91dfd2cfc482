use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamConfig, AdamState, Tape, Tensor};
use crate::error::{Error, Result};
use crate::mesh::MeshSequenceDataset;
use crate::model::Autoencoder;
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Multiplies the learning rate after every epoch.
    pub lr_decay: f64,
    pub batch_size: usize,
    /// Seeds the minibatch shuffle.
    pub seed: u64,
    /// Save a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            lr: 8e-3,
            lr_decay: 0.99,
            batch_size: 16,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    /// Learning rate used during epoch `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi(epoch as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.lr_decay > 0.0) || self.batch_size == 0 {
            return Err(Error::Config("lr_decay must be positive and batch_size at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Mean training loss before the first step.
    pub initial_loss: f64,
    /// Mean training loss after the last step.
    pub final_loss: f64,
    /// Mean minibatch loss per epoch.
    pub history: Vec<f64>,
    /// Attention rows seen with a non-positive masked score sum, summed over steps.
    pub degenerate_rows: usize,
}

fn load_split<T: Real>(dataset: &MeshSequenceDataset<T>, indices: &[usize]) -> Result<Vec<Tensor<T>>> {
    indices.iter().map(|&i| dataset.normalized_sample(i)).collect()
}

fn batch_l1<T: Real>(model: &Autoencoder<T>, batch: &[Tensor<T>]) -> Result<f64> {
    let out = model.forward_batch(batch)?;
    Ok(out
        .iter()
        .zip(batch)
        .map(|(y, x)| {
            y.data().iter().zip(x.data()).map(|(a, b)| (*a - *b).abs().to_f64_lossy()).sum::<f64>() / x.len() as f64
        })
        .sum())
}

/// Mean per-sample L1 loss of `model` on normalized samples `indices`.
pub fn dataset_loss<T: Real>(model: &Autoencoder<T>, dataset: &MeshSequenceDataset<T>, indices: &[usize], chunk: usize) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Contract("cannot compute a loss over no samples".into()));
    }
    let samples = load_split(dataset, indices)?;
    let parts = samples
        .par_chunks(chunk.max(1))
        .map(|b| batch_l1(model, b))
        .collect::<Result<Vec<f64>>>()?;
    Ok(parts.into_iter().sum::<f64>() / indices.len() as f64)
}

/// Adam on the mean L1 reconstruction loss over shuffled minibatches of the training split.
pub fn train<T: Real>(
    model: &mut Autoencoder<T>,
    dataset: &MeshSequenceDataset<T>,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if dataset.template().num_vertices() != model.num_vertices() {
        return Err(Error::Contract(format!(
            "dataset has {} vertices, model expects {}",
            dataset.template().num_vertices(),
            model.num_vertices()
        )));
    }
    let train_idx = dataset.split().train.clone();
    let samples = load_split(dataset, &train_idx)?;
    if samples.is_empty() {
        return Err(Error::Contract("training split is empty".into()));
    }
    let initial_loss = dataset_loss(model, dataset, &train_idx, cfg.batch_size)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = {
        let values: Vec<&Tensor<T>> = model.params().entries().iter().map(|e| &e.value).collect();
        AdamState::new(&values)
    };
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut degenerate_rows = 0;
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<Tensor<T>> = chunk.iter().map(|&i| samples[i].clone()).collect();
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape)?;
            degenerate_rows += bound.degenerate_rows;
            let loss = model.batch_loss(&mut tape, &bound, &batch)?;
            let lv = tape.value(loss).item().to_f64_lossy();
            if !lv.is_finite() {
                return Err(Error::NonFinite(format!("training loss {lv} at epoch {epoch}, batch {b}")));
            }
            total += lv * chunk.len() as f64;
            let grads = tape.backward(loss)?;
            let grads = model.params().collect_grads(bound.bindings(), &grads);
            let mut values = model.params_mut().values_mut();
            adam_step(&mut values, &grads, &mut state, lr, AdamConfig::default())?;
            model.post_step();
        }
        let mean = total / samples.len() as f64;
        log::info!("epoch {epoch}: loss {mean:.6}, lr {lr:.3e}");
        history.push(mean);
        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
                model.save(&dir.join(format!("epoch_{:04}", epoch + 1)))?;
            }
        }
    }
    let final_loss = dataset_loss(model, dataset, &train_idx, cfg.batch_size)?;
    Ok(TrainReport {
        initial_loss,
        final_loss,
        history,
        degenerate_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_is_geometric() {
        let cfg = TrainConfig::default();
        let mut lr = cfg.lr;
        for e in 0..50 {
            assert!((cfg.lr_at(e) - lr).abs() <= 1e-15);
            lr *= cfg.lr_decay;
        }
    }

    #[test]
    fn zero_epochs_rejected() {
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig { lr: 0.0, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
