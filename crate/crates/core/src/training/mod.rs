//! The optimization loop: seeded shuffling, per-sample forward/backward with
//! an order-preserving reduction, SGDM updates, loss logging and
//! checkpointing.

mod checkpoint;
mod loss;
mod sgdm;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use loss::{cross_entropy_loss, sample_loss, sample_loss_and_grad, LOG_EPS};
pub use sgdm::{sgdm_step, sgdm_update, MomentumBuffers};

use crate::error::{Error, Result};
use crate::fusion::FusedSample;
use crate::network::{Gradients, Network};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Write a periodic checkpoint every this many epochs; 0 disables
    /// periodic checkpoints (the final one is always written).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            learning_rate: 0.0005,
            momentum: 0.9,
            epochs: 1,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.epochs < 1 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Where checkpoints and logs go, and how work is scheduled.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Final checkpoint path; also rewritten as the last-good state.
    pub checkpoint_path: Option<PathBuf>,
    /// Periodic checkpoint path pattern containing `{epoch}`.
    pub periodic_pattern: Option<String>,
    /// Append-only `epoch,step,mean_loss` lines.
    pub log_path: Option<PathBuf>,
    /// Force strictly serial sample processing. Results are bit-identical
    /// either way (the parallel path reduces in sample order); this just
    /// removes scheduling jitter entirely.
    pub deterministic: bool,
    /// Print per-epoch mean loss to stdout.
    pub verbose: bool,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub epoch: usize,
    pub step: usize,
    /// Mean loss of the last completed epoch.
    pub running_loss: f64,
    /// Mean loss per epoch, in order.
    pub epoch_losses: Vec<f64>,
    pub momentum_buffers: MomentumBuffers,
}

/// Trains the model in place. Runs epochs x ceil(N / batch_size) SGDM steps,
/// shuffling sample order each epoch with a ChaCha stream seeded from the
/// config. Aborts (keeping the previously written checkpoint) if the loss
/// leaves the finite range.
pub fn train(
    model: &mut Network,
    dataset: &[FusedSample],
    config: &TrainConfig,
    options: &TrainOptions,
) -> Result<TrainState> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("training dataset is empty".into()));
    }
    for sample in dataset {
        if let Some(&v) = sample.target.iter().max() {
            if (v as usize) >= model.config.num_classes {
                return Err(Error::MaskValueOutOfRange {
                    value: v as u32,
                    num_classes: model.config.num_classes,
                    context: "training target".into(),
                });
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut buffers = MomentumBuffers::new();
    let mut state = TrainState {
        epoch: 0,
        step: 0,
        running_loss: f64::NAN,
        epoch_losses: Vec::with_capacity(config.epochs),
        momentum_buffers: MomentumBuffers::new(),
    };

    let mut log_file = match &options.log_path {
        Some(path) => Some(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|source| Error::Io {
                    path: path.clone(),
                    source,
                })?,
        ),
        None => None,
    };

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss_sum = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(config.batch_size) {
            let batch_loss = run_batch(model, dataset, batch, config, options, &mut buffers)?;
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step: state.step,
                });
            }
            state.step += 1;
            epoch_loss_sum += batch_loss;
            batches += 1;
        }
        let mean_loss = epoch_loss_sum / batches as f64;
        state.epoch = epoch;
        state.running_loss = mean_loss;
        state.epoch_losses.push(mean_loss);

        if let Some(file) = log_file.as_mut() {
            writeln!(file, "{epoch},{},{mean_loss:.6}", state.step).map_err(|source| {
                Error::Io {
                    path: options.log_path.clone().unwrap_or_default(),
                    source,
                }
            })?;
        }
        if options.verbose {
            println!("epoch {epoch} step {} mean_loss {mean_loss:.6}", state.step);
        }

        if config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 {
            if let Some(pattern) = &options.periodic_pattern {
                let path = PathBuf::from(pattern.replace("{epoch}", &epoch.to_string()));
                save_checkpoint(&path, model, &buffers, epoch, config.seed)?;
            }
        }
    }

    if let Some(path) = &options.checkpoint_path {
        save_checkpoint(path, model, &buffers, state.epoch, config.seed)?;
    }
    state.momentum_buffers = buffers;
    Ok(state)
}

/// One optimization step over a batch of sample indices. Per-sample gradients
/// are computed independently (in parallel unless deterministic mode forces
/// serial execution) and reduced in index order, so the result does not depend
/// on scheduling.
fn run_batch(
    model: &mut Network,
    dataset: &[FusedSample],
    batch: &[usize],
    config: &TrainConfig,
    options: &TrainOptions,
    buffers: &mut MomentumBuffers,
) -> Result<f64> {
    let batch_len = batch.len();
    let one = |&idx: &usize| -> Result<(f64, Gradients)> {
        let sample = &dataset[idx];
        let (logits, cache) = model.forward_train(&sample.channels)?;
        let (loss, dlogits) = sample_loss_and_grad(&logits, &sample.target, batch_len)?;
        Ok((loss, model.backward(&cache, &dlogits)))
    };
    let results: Vec<(f64, Gradients)> = if options.deterministic || batch_len == 1 {
        batch.iter().map(one).collect::<Result<_>>()?
    } else {
        batch.par_iter().map(one).collect::<Result<_>>()?
    };

    let mut batch_loss = 0.0;
    let mut total = Gradients::new();
    for (loss, grads) in &results {
        batch_loss += loss / batch_len as f64;
        total.merge(grads);
    }
    sgdm_step(model, &total, buffers, config.learning_rate, config.momentum)?;
    Ok(batch_loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_synthetic;
    use crate::fusion::fuse_sequence;
    use crate::network::NetworkConfig;

    fn fused_set(seqs: usize, frames: usize, dims: (usize, usize), n: usize, seed: u64) -> Vec<FusedSample> {
        generate_synthetic(seqs, frames, dims, n, seed)
            .unwrap()
            .iter()
            .flat_map(|s| fuse_sequence(s).unwrap())
            .collect()
    }

    #[test]
    fn step_count_is_epochs_times_ceil_batches() {
        let data = fused_set(2, 15, (16, 16), 3, 0);
        assert_eq!(data.len(), 10);
        let mut net = Network::new(NetworkConfig::tiny(3, 0)).unwrap();
        let config = TrainConfig {
            batch_size: 4,
            epochs: 1,
            learning_rate: 1e-4,
            ..Default::default()
        };
        let state = train(&mut net, &data, &config, &TrainOptions::default()).unwrap();
        assert_eq!(state.step, 3);
        assert_eq!(state.epoch, 1);
    }

    #[test]
    fn training_is_deterministic_for_fixed_seed() {
        let data = fused_set(2, 6, (16, 16), 3, 1);
        let run = || {
            let mut net = Network::new(NetworkConfig::tiny(3, 5)).unwrap();
            let config = TrainConfig {
                batch_size: 2,
                epochs: 2,
                ..Default::default()
            };
            let opts = TrainOptions {
                deterministic: true,
                ..Default::default()
            };
            train(&mut net, &data, &config, &opts).unwrap().running_loss
        };
        let a = run();
        let b = run();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn parallel_and_serial_reduction_agree_bitwise() {
        let data = fused_set(1, 6, (16, 16), 3, 2);
        let mut run = |deterministic: bool| {
            let mut net = Network::new(NetworkConfig::tiny(3, 7)).unwrap();
            let config = TrainConfig {
                batch_size: 2,
                epochs: 1,
                ..Default::default()
            };
            let opts = TrainOptions {
                deterministic,
                ..Default::default()
            };
            train(&mut net, &data, &config, &opts).unwrap().running_loss
        };
        assert_eq!(run(true).to_bits(), run(false).to_bits());
    }

    #[test]
    fn one_zero_momentum_step_decreases_loss_for_some_small_lr() {
        let data = fused_set(1, 3, (16, 16), 3, 3);
        let evaluate = |net: &Network| -> f64 {
            let logits = net.forward(&data[0].channels).unwrap();
            sample_loss(&logits, &data[0].target).unwrap()
        };
        let mut decreased = false;
        for lr in [1e-2, 1e-3, 1e-4] {
            let mut net = Network::new(NetworkConfig::tiny(3, 11)).unwrap();
            let before = evaluate(&net);
            let config = TrainConfig {
                batch_size: 1,
                epochs: 1,
                learning_rate: lr,
                momentum: 0.0,
                ..Default::default()
            };
            train(&mut net, &data[..1], &config, &TrainOptions::default()).unwrap();
            if evaluate(&net) < before {
                decreased = true;
                break;
            }
        }
        assert!(decreased, "no tested learning rate decreased the loss");
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let mut net = Network::new(NetworkConfig::tiny(3, 0)).unwrap();
        assert!(train(&mut net, &[], &TrainConfig::default(), &TrainOptions::default()).is_err());
    }

    #[test]
    fn log_file_gets_one_line_per_epoch() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("train.log");
        let data = fused_set(1, 6, (16, 16), 3, 4);
        let mut net = Network::new(NetworkConfig::tiny(3, 0)).unwrap();
        let config = TrainConfig {
            batch_size: 2,
            epochs: 3,
            ..Default::default()
        };
        let opts = TrainOptions {
            log_path: Some(log.clone()),
            ..Default::default()
        };
        train(&mut net, &data, &config, &opts).unwrap();
        let text = std::fs::read_to_string(&log).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        // epoch,step,mean_loss
        let fields: Vec<&str> = lines[0].split(',').collect();
        assert_eq!(fields.len(), 3);
        assert_eq!(fields[0], "1");
        assert!(fields[2].parse::<f64>().is_ok());
    }

    #[test]
    fn periodic_and_final_checkpoints_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let data = fused_set(1, 6, (16, 16), 3, 5);
        let mut net = Network::new(NetworkConfig::tiny(3, 0)).unwrap();
        let config = TrainConfig {
            batch_size: 2,
            epochs: 4,
            checkpoint_every: 2,
            ..Default::default()
        };
        let opts = TrainOptions {
            checkpoint_path: Some(dir.path().join("final.ckpt")),
            periodic_pattern: Some(
                dir.path().join("epoch{epoch}.ckpt").to_string_lossy().into_owned(),
            ),
            ..Default::default()
        };
        train(&mut net, &data, &config, &opts).unwrap();
        assert!(dir.path().join("final.ckpt").exists());
        assert!(dir.path().join("epoch2.ckpt").exists());
        assert!(dir.path().join("epoch4.ckpt").exists());
        assert!(!dir.path().join("epoch1.ckpt").exists());
        assert!(!dir.path().join("epoch3.ckpt").exists());
    }
}
