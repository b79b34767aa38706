//! The single run configuration, its TOML form and command-line overrides.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use dcca_core::dcca::DccaConfig;
use dcca_nn::net::NetConfig;
use dcca_nn::style::NstConfig;
use dcca_nn::train::TrainConfig;

use crate::UsageError;

/// Synthetic data set: phantom pullbacks split into train, validation, test
/// and a dim-strut test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub train_cases: usize,
    pub val_cases: usize,
    pub test_cases: usize,
    /// Held-out pullbacks rendered with `dim_strut_level`.
    pub dim_cases: usize,
    pub frames: usize,
    /// Strut intensity of training pullbacks, cycled over the cases.
    pub strut_levels: Vec<f64>,
    pub dim_strut_level: f64,
    /// Probability that a pullback gets a malapposed or covered segment.
    pub segment_probability: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            train_cases: 8,
            val_cases: 1,
            test_cases: 2,
            dim_cases: 2,
            frames: 16,
            strut_levels: vec![1.0],
            dim_strut_level: 0.5,
            segment_probability: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Sliding-window copies per training pullback.
    pub windows_per_case: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { windows_per_case: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StyleConfig {
    /// Second stent round on originals plus challenged copies.
    pub round2: TrainConfig,
    pub nst: NstConfig,
}

impl Default for StyleConfig {
    fn default() -> Self {
        StyleConfig {
            round2: TrainConfig {
                lr: 1e-3,
                epochs: 10,
                ..toy_train()
            },
            nst: NstConfig {
                size: 64,
                iterations: 100,
                max_regions: Some(512),
                ..Default::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferConfig {
    /// Cartesian grid side used for training and inference.
    pub cartesian_size: usize,
    /// Depth stride of the sliding window; the chunk depth when absent.
    pub stride: Option<usize>,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            cartesian_size: 96,
            stride: None,
        }
    }
}

/// Every stage's settings. The defaults describe the desk-scale toy run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seed of phantom generation and window offsets.
    pub seed: u64,
    pub synth: SynthConfig,
    pub augment: AugmentConfig,
    pub net: NetConfig,
    /// Stent model, first round.
    pub stent: TrainConfig,
    pub style: StyleConfig,
    pub lumen: TrainConfig,
    pub infer: InferConfig,
    pub dcca: DccaConfig,
}

fn toy_train() -> TrainConfig {
    TrainConfig {
        lr: 3e-3,
        chunk_depth: 4,
        batch_size: 1,
        epochs: 20,
        intensity_jitter: 0.1,
        ..Default::default()
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            synth: SynthConfig::default(),
            augment: AugmentConfig::default(),
            net: NetConfig {
                toy_scale: 8,
                ..Default::default()
            },
            stent: toy_train(),
            style: StyleConfig::default(),
            lumen: TrainConfig {
                epochs: 10,
                ..toy_train()
            },
            infer: InferConfig::default(),
            dcca: DccaConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let s = &self.synth;
        let usage = |m: String| Err(anyhow!(UsageError(m)));
        if s.train_cases == 0 || s.test_cases == 0 || s.frames < 2 {
            return usage("synth needs at least one training and one test case of two or more frames".into());
        }
        if s.strut_levels.is_empty() || s.strut_levels.iter().chain([&s.dim_strut_level]).any(|l| !(0.0..=1.0).contains(l)) {
            return usage("strut levels must be non-empty and lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&s.segment_probability) {
            return usage("segment_probability must lie in [0, 1]".into());
        }
        for (name, t) in [("stent", &self.stent), ("lumen", &self.lumen), ("style.round2", &self.style.round2)] {
            t.validate().map_err(|e| anyhow!(UsageError(format!("{name}: {e}"))))?;
            if t.chunk_depth > s.frames {
                return usage(format!("{name}: chunk_depth {} exceeds {} frames", t.chunk_depth, s.frames));
            }
        }
        self.net.validate().map_err(|e| anyhow!(UsageError(e.to_string())))?;
        self.style.nst.validate().map_err(|e| anyhow!(UsageError(e.to_string())))?;
        self.dcca.validate().map_err(|e| anyhow!(UsageError(e.to_string())))?;
        let n = self.infer.cartesian_size;
        if n == 0 || !n.is_multiple_of(dcca_nn::net::INPLANE_DIVISOR) {
            return usage(format!(
                "cartesian_size must be a positive multiple of {}",
                dcca_nn::net::INPLANE_DIVISOR
            ));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Applies the master seed to phantom generation and every training round.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.stent.seed = seed;
        self.lumen.seed = seed;
        self.style.round2.seed = seed;
        self.style.nst.pairing_seed = seed;
    }
}

/// Sets `path` (dot separated) in `table` to `value`, parsed as a TOML value
/// when possible and as a bare string otherwise.
fn set_path(table: &mut toml::Table, path: &str, value: &str) -> Result<()> {
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_owned()));
    let keys: Vec<&str> = path.split('.').collect();
    let (last, parents) = keys.split_last().expect("split yields at least one key");
    let mut cur = table;
    for k in parents {
        let entry = cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!(UsageError(format!("{path}: {k} is not a table"))))?;
    }
    cur.insert(last.to_string(), parsed);
    Ok(())
}

/// Loads `path` (defaults when absent), applies `key=value` overrides and an
/// optional seed, and validates the result.
/// Recursively overlays `top` onto `base`.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Loads `path` over the defaults, applies `key=value` overrides and an
/// optional seed, and validates the result. Partial tables keep the default
/// values of the fields they omit.
pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<RunConfig> {
    let mut table: toml::Table = toml::from_str(&RunConfig::default().to_toml()).expect("defaults parse");
    if let Some(p) = path {
        let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
        let file = toml::from_str::<toml::Table>(&text)
            .map_err(|e| anyhow!(UsageError(format!("config {}: {e}", p.display()))))?;
        merge(&mut table, file);
    }
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| anyhow!(UsageError(format!("override {o:?} is not key=value"))))?;
        set_path(&mut table, k.trim(), v.trim())?;
    }
    let mut cfg: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e| anyhow!(UsageError(format!("config: {e}"))))?;
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let o = vec![
            "stent.epochs = 3".to_string(),
            "synth.strut_levels=[1.0, 0.5]".to_string(),
            "style.nst.size=32".to_string(),
        ];
        let cfg = load(None, &o, Some(9)).unwrap();
        assert_eq!(cfg.stent.epochs, 3);
        assert_eq!(cfg.synth.strut_levels, vec![1.0, 0.5]);
        assert_eq!(cfg.style.nst.size, 32);
        assert_eq!((cfg.seed, cfg.lumen.seed), (9, 9));
        assert_ne!(cfg.hash(), RunConfig::default().hash());
    }

    #[test]
    fn partial_tables_keep_run_defaults() {
        let cfg = load(None, &["style.round2.lr=0.001".to_string()], None).unwrap();
        let def = RunConfig::default();
        assert_eq!(cfg.style.round2.lr, 0.001);
        assert_eq!(cfg.style.round2.chunk_depth, def.style.round2.chunk_depth);
        assert_eq!(cfg.stent, def.stent);
    }

    #[test]
    fn bad_overrides_are_usage_errors() {
        for o in ["stent.epochs", "stent.nope=1", "stent.epochs=0", "seed.x=1"] {
            let e = load(None, &[o.to_string()], None).unwrap_err();
            assert!(e.downcast_ref::<UsageError>().is_some(), "{o}: {e}");
        }
    }
}
