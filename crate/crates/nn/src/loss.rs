//! `w_bce·BCE + w_tversky·(1 − Tversky)`.
//!
//! Tversky index `(Σpg + ε) / (Σpg + α·Σp(1−g) + β·Σ(1−p)g + ε)`. With
//! `α = β = 0.5` it is the soft Dice coefficient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub w_tversky: f64,
    pub w_bce: f64,
    pub alpha: f64,
    pub beta: f64,
    pub eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            w_tversky: 0.5,
            w_bce: 0.5,
            alpha: 0.5,
            beta: 0.5,
            eps: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if (self.w_tversky + self.w_bce - 1.0).abs() > 1e-9 || self.w_tversky < 0.0 || self.w_bce < 0.0 {
            return Err(Error::TrainConfig("loss weights must be non-negative and sum to 1".into()));
        }
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return Err(Error::TrainConfig("tversky alpha and beta must be > 0".into()));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(Error::TrainConfig("tversky smoothing must be >= 0".into()));
        }
        Ok(())
    }
}

struct Sums {
    tp: f64,
    fp: f64,
    fn_: f64,
}

fn sums(p: impl Iterator<Item = f64>, g: &[f32]) -> Sums {
    let mut s = Sums { tp: 0.0, fp: 0.0, fn_: 0.0 };
    for (p, &g) in p.zip(g) {
        let g = g as f64;
        s.tp += p * g;
        s.fp += p * (1.0 - g);
        s.fn_ += (1.0 - p) * g;
    }
    s
}

fn tversky_index(s: &Sums, cfg: &LossConfig) -> f64 {
    (s.tp + cfg.eps) / (s.tp + cfg.alpha * s.fp + cfg.beta * s.fn_ + cfg.eps)
}

fn check(p: usize, g: usize) -> Result<()> {
    if p != g || p == 0 {
        return Err(Error::Shape(format!("prediction has {p} voxels, target {g}")));
    }
    Ok(())
}

/// `1 − Tversky` on probabilities.
pub fn tversky_loss(pred: &[f32], gt: &[f32], cfg: &LossConfig) -> Result<f64> {
    check(pred.len(), gt.len())?;
    Ok(1.0 - tversky_index(&sums(pred.iter().map(|&p| p as f64), gt), cfg))
}

/// Mean binary cross-entropy on probabilities, clamped away from 0 and 1.
pub fn bce_loss(pred: &[f32], gt: &[f32]) -> Result<f64> {
    check(pred.len(), gt.len())?;
    let s: f64 = pred
        .iter()
        .zip(gt)
        .map(|(&p, &g)| {
            let p = (p as f64).clamp(1e-7, 1.0 - 1e-7);
            let g = g as f64;
            -(g * p.ln() + (1.0 - g) * (1.0 - p).ln())
        })
        .sum();
    Ok(s / pred.len() as f64)
}

/// Combined loss on probabilities.
pub fn loss(pred: &[f32], gt: &[f32], cfg: &LossConfig) -> Result<f64> {
    Ok(cfg.w_bce * bce_loss(pred, gt)? + cfg.w_tversky * tversky_loss(pred, gt, cfg)?)
}

/// Combined loss on logits, using the stable form of BCE.
pub fn seg_loss_value(z: &[f32], g: &[f32], cfg: &LossConfig) -> f64 {
    let n = z.len() as f64;
    let bce: f64 = z
        .iter()
        .zip(g)
        .map(|(&z, &g)| {
            let z = z as f64;
            z.max(0.0) - z * g as f64 + (-z.abs()).exp().ln_1p()
        })
        .sum::<f64>()
        / n;
    let s = sums(z.iter().map(|&z| sigmoid(z) as f64), g);
    cfg.w_bce * bce + cfg.w_tversky * (1.0 - tversky_index(&s, cfg))
}

/// Gradient of [`seg_loss_value`] with respect to the logits.
pub(crate) fn seg_loss_grad(z: &[f32], g: &[f32], cfg: &LossConfig) -> Vec<f32> {
    let n = z.len() as f64;
    let p: Vec<f64> = z.iter().map(|&z| sigmoid(z) as f64).collect();
    let s = sums(p.iter().copied(), g);
    let a = s.tp + cfg.eps;
    let b = s.tp + cfg.alpha * s.fp + cfg.beta * s.fn_ + cfg.eps;
    p.iter()
        .zip(g)
        .map(|(&p, &g)| {
            let g = g as f64;
            let d_bce = (p - g) / n;
            let db = g + cfg.alpha * (1.0 - g) - cfg.beta * g;
            let d_index = (g * b - a * db) / (b * b);
            (d_bce * cfg.w_bce - cfg.w_tversky * d_index * p * (1.0 - p)) as f32
        })
        .collect()
}
