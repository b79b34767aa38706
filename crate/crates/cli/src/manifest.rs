//! Run manifests: what each stage read and wrote, how long it took, and the
//! configuration hash and seed it ran under.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    /// Files read from outside the run directory.
    pub inputs: Vec<PathBuf>,
    pub stages: Vec<StageRecord>,
    /// Every file written, relative to the run directory.
    pub outputs: Vec<PathBuf>,
    pub total_seconds: f64,
}

/// Accumulates stage records for one run directory.
pub struct Recorder {
    root: PathBuf,
    started: Instant,
    manifest: Manifest,
}

impl Recorder {
    pub fn new(root: &Path, command: &str, config_hash: String, seed: u64) -> Self {
        Recorder {
            root: root.to_path_buf(),
            started: Instant::now(),
            manifest: Manifest {
                command: command.to_owned(),
                config_hash,
                seed,
                inputs: Vec::new(),
                stages: Vec::new(),
                outputs: Vec::new(),
                total_seconds: 0.0,
            },
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn relative(&self, p: &Path) -> PathBuf {
        p.strip_prefix(&self.root).map(Path::to_path_buf).unwrap_or_else(|_| p.to_path_buf())
    }

    /// Runs `f`, which returns `(inputs, outputs)`, and records it as a stage.
    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> Result<(Vec<PathBuf>, Vec<PathBuf>, T)>) -> Result<T> {
        let t = Instant::now();
        let (inputs, outputs, value) = f().with_context(|| format!("stage {name}"))?;
        let inputs: Vec<PathBuf> = inputs.iter().map(|p| self.relative(p)).collect();
        for p in &inputs {
            if p.is_absolute() && !self.manifest.inputs.contains(p) {
                self.manifest.inputs.push(p.clone());
            }
        }
        let outputs: Vec<PathBuf> = outputs.iter().map(|p| self.relative(p)).collect();
        self.manifest.outputs.extend(outputs.iter().cloned());
        self.manifest.stages.push(StageRecord {
            name: name.to_owned(),
            inputs,
            outputs,
            seconds: t.elapsed().as_secs_f64(),
        });
        Ok(value)
    }

    /// Writes `manifest.json` into the run directory.
    pub fn finish(mut self) -> Result<Manifest> {
        self.manifest.total_seconds = self.started.elapsed().as_secs_f64();
        fs::create_dir_all(&self.root).with_context(|| format!("creating {}", self.root.display()))?;
        let path = self.root.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(self.manifest)
    }
}

pub fn load(root: &Path) -> Result<Manifest> {
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
