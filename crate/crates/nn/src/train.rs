//! Adam training with gradient accumulation, per-epoch validation and
//! best-checkpoint retention.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::loss::LossConfig;
use crate::net::SegNet;
use crate::params::AdamConfig;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub loss: LossConfig,
    /// Frames per training chunk.
    pub chunk_depth: usize,
    /// Chunks per optimizer step (gradients are averaged).
    pub batch_size: usize,
    pub epochs: usize,
    /// Binarization threshold for validation and inference.
    pub threshold: f64,
    pub seed: u64,
    /// Global intensity scaling drawn from `[1 - j, 1 + j]` per chunk; at most 0.1.
    pub intensity_jitter: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            loss: LossConfig::default(),
            chunk_depth: 32,
            batch_size: 1,
            epochs: 10,
            threshold: 0.5,
            seed: 0,
            intensity_jitter: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::TrainConfig(m.into()));
        self.loss.validate()?;
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.chunk_depth == 0 || self.batch_size == 0 || self.epochs == 0 {
            return bad("chunk_depth, batch_size and epochs must be >= 1");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad("threshold must lie strictly between 0 and 1");
        }
        if !(0.0..=0.1).contains(&self.intensity_jitter) {
            return bad("intensity_jitter must lie in [0, 0.1]");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..Default::default()
        }
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: usize,
    /// Mean chunk loss over the epoch.
    pub loss: f64,
    pub val_dice: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation Dice (the last
    /// epoch when there is no validation set).
    pub best: SegNet,
    pub last: SegNet,
    pub best_epoch: usize,
    pub log: Vec<LogRow>,
}

/// `2·Σpg / (Σp + Σg)`; 1 when both are empty.
pub fn soft_dice(pred: &[f32], gt: &[f32]) -> f64 {
    let (mut pg, mut s) = (0.0f64, 0.0f64);
    for (&p, &g) in pred.iter().zip(gt) {
        pg += (p * g) as f64;
        s += (p + g) as f64;
    }
    if s == 0.0 {
        1.0
    } else {
        2.0 * pg / s
    }
}

/// Dice of `pred ≥ tau` against a binary target.
pub fn hard_dice(pred: &[f32], gt: &[f32], tau: f64) -> f64 {
    let bin: Vec<f32> = pred.iter().map(|&p| if p as f64 >= tau { 1.0 } else { 0.0 }).collect();
    soft_dice(&bin, gt)
}

/// Mean hard Dice of `net` over `samples`.
pub fn evaluate_dice(net: &SegNet, samples: &[Sample], tau: f64) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let p = net.predict(s.image.clone())?;
        total += hard_dice(p.data(), s.mask.data(), tau);
    }
    Ok(total / samples.len() as f64)
}

fn check_samples(net: &SegNet, samples: &[Sample]) -> Result<()> {
    for s in samples {
        net.check_input(s.image.shape())?;
        let [_, d, h, w] = s.image.shape();
        if s.mask.shape() != [1, d, h, w] {
            return Err(Error::Shape(format!(
                "mask {:?} does not match image {:?}",
                s.mask.shape(),
                s.image.shape()
            )));
        }
    }
    Ok(())
}

fn jittered(image: &Tensor, scale: f32) -> Tensor {
    let mut t = image.clone();
    t.data_mut().iter_mut().for_each(|v| *v = (*v * scale).clamp(0.0, 1.0));
    t
}

/// One forward/backward pass; accumulates gradients and returns the loss.
pub fn accumulate_step(net: &mut SegNet, image: Tensor, mask: Tensor, loss: LossConfig) -> Result<f64> {
    let mut g = Graph::new();
    let x = g.input(image);
    let z = net.forward(&mut g, x)?;
    let l = g.seg_loss(z, mask, loss);
    let value = g.value(l).item() as f64;
    if value.is_finite() {
        let grads = g.backward(l);
        g.accumulate_param_grads(&grads, net.params_mut());
    }
    Ok(value)
}

/// Trains `net` on `train`, validating on `val` after each epoch. With
/// `out_dir`, the log is rewritten every epoch and the best checkpoint is
/// saved whenever validation improves.
pub fn train(
    mut net: SegNet,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_samples(&net, train)?;
    check_samples(&net, val)?;
    // independent of the stream that initialised the weights
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let adam = cfg.adam();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, SegNet)> = None;
    let mut step = 0;
    net.params_mut().zero_grad();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            for &i in batch {
                let s = &train[i];
                let image = if cfg.intensity_jitter > 0.0 {
                    let j = cfg.intensity_jitter;
                    jittered(&s.image, rng.random_range(1.0 - j..=1.0 + j) as f32)
                } else {
                    s.image.clone()
                };
                let loss = accumulate_step(&mut net, image, s.mask.clone(), cfg.loss)?;
                if !loss.is_finite() || !net.params().grads_finite() {
                    if let Some(dir) = out_dir {
                        checkpoint::write_log(dir, &log)?;
                    }
                    return Err(Error::NonFiniteLoss { epoch, step, loss });
                }
                epoch_loss += loss;
            }
            net.params_mut().scale_grads(1.0 / batch.len() as f32);
            net.params_mut().adam_step(&adam);
            net.params_mut().zero_grad();
            step += 1;
        }
        let val_dice = if val.is_empty() {
            None
        } else {
            Some(evaluate_dice(&net, val, cfg.threshold)?)
        };
        log.push(LogRow {
            epoch,
            step,
            loss: epoch_loss / train.len() as f64,
            val_dice,
        });
        let score = val_dice.unwrap_or(f64::NEG_INFINITY);
        let improved = match &best {
            None => true,
            Some((b, _, _)) => val_dice.is_none() || score > *b,
        };
        if improved {
            best = Some((score, epoch, net.clone()));
            if let Some(dir) = out_dir {
                checkpoint::save(dir, &net, cfg, &log)?;
            }
        }
        if let Some(dir) = out_dir {
            checkpoint::write_log(dir, &log)?;
        }
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best,
        last: net,
        best_epoch,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dice_helpers() {
        assert_eq!(soft_dice(&[0.0; 4], &[0.0; 4]), 1.0);
        assert_eq!(soft_dice(&[1.0, 0.0], &[1.0, 0.0]), 1.0);
        assert_eq!(soft_dice(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert_eq!(hard_dice(&[0.6, 0.4], &[1.0, 1.0], 0.5), 2.0 / 3.0);
    }

    #[test]
    fn config_checks() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { lr: 0.0, ..Default::default() },
            TrainConfig { threshold: 1.0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { intensity_jitter: 0.2, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
        let text = toml::to_string(&TrainConfig::default()).unwrap();
        assert_eq!(toml::from_str::<TrainConfig>(&text).unwrap(), TrainConfig::default());
    }
}
