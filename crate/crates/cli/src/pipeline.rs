//! End-to-end run: synth → augment → train → style-train → infer → eval →
//! dcca, all inside one run directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use dcca_core::Target;

use crate::config::RunConfig;
use crate::manifest::{Manifest, Recorder};
use crate::stages::{self, image_stems, MetricsReport, METRICS_FILE};

pub const CONFIG_FILE: &str = "config.toml";

/// Layout of a run directory.
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn data(&self, split: &str) -> PathBuf {
        self.root.join("data").join(split)
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(name)
    }

    pub fn predictions(&self, name: &str) -> PathBuf {
        self.root.join("predictions").join(name)
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("reports").join(METRICS_FILE)
    }

    pub fn dcca(&self, case: &str) -> PathBuf {
        self.root.join("dcca").join(case)
    }
}

pub struct PipelineOutcome {
    pub manifest: Manifest,
    pub metrics: MetricsReport,
}

fn stems_of(dir: &Path) -> Result<Vec<PathBuf>> {
    if dir.is_dir() {
        image_stems(dir)
    } else {
        Ok(Vec::new())
    }
}

pub fn run(cfg: &RunConfig, root: &Path) -> Result<PipelineOutcome> {
    let layout = RunLayout { root: root.to_path_buf() };
    let mut rec = Recorder::new(root, "pipeline", cfg.hash(), cfg.seed);
    rec.stage("config", || {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        let path = root.join(CONFIG_FILE);
        fs::write(&path, cfg.to_toml()).with_context(|| format!("writing {}", path.display()))?;
        Ok((Vec::new(), vec![path], ()))
    })?;
    rec.stage("synth", || stages::synth(cfg, &root.join("data")))?;
    let train = stems_of(&layout.data("train"))?;
    let val = stems_of(&layout.data("val"))?;
    let test = stems_of(&layout.data("test"))?;
    let dim = stems_of(&layout.data("dim"))?;
    rec.stage("augment", || stages::augment(cfg, &train, &layout.data("augmented")))?;
    let mut train_all = train.clone();
    train_all.extend(stems_of(&layout.data("augmented"))?);

    let round1 = layout.checkpoint("stent/round1");
    let round2 = layout.checkpoint("stent/round2");
    let lumen = layout.checkpoint("lumen");
    rec.stage("train", || {
        let (mut read, mut written, _) = stages::train_model(cfg, Target::Stent, &train_all, &val, &round1, None)?;
        let (r, w, _) = stages::train_model(cfg, Target::Lumen, &train_all, &val, &lumen, None)?;
        read.extend(r);
        written.extend(w);
        Ok((read, written, ()))
    })?;
    rec.stage("style-train", || stages::style_train(cfg, &round1, &train_all, &val, &round2))?;

    let jobs = [
        (&round2, &test, Target::Stent, "test"),
        (&lumen, &test, Target::Lumen, "test"),
        (&round1, &dim, Target::Stent, "dim_round1"),
        (&round2, &dim, Target::Stent, "dim_round2"),
    ];
    rec.stage("infer", || {
        let (mut read, mut written) = (Vec::new(), Vec::new());
        for (ckpt, stems, target, name) in jobs {
            if stems.is_empty() {
                continue;
            }
            let (r, w, _) = stages::infer(cfg, ckpt, stems, target, None, &layout.predictions(name))?;
            read.extend(r);
            written.extend(w);
        }
        Ok((read, written, ()))
    })?;

    let metrics = rec.stage("eval", || {
        let (mut read, _, test_metrics) = stages::evaluate(&test, &layout.predictions("test"))?;
        let mut dim_metrics = [None, None];
        if !dim.is_empty() {
            for (slot, name) in dim_metrics.iter_mut().zip(["dim_round1", "dim_round2"]) {
                let (r, _, m) = stages::evaluate(&dim, &layout.predictions(name))?;
                read.extend(r);
                *slot = Some(m);
            }
        }
        let [dim_round1, dim_round2] = dim_metrics;
        let report = MetricsReport {
            match_radius_um: dcca_core::metrics::MATCH_RADIUS_UM,
            test: test_metrics,
            dim_round1,
            dim_round2,
        };
        let path = stages::write_json(&report, &layout.metrics())?;
        Ok((read, vec![path], report))
    })?;

    rec.stage("dcca", || {
        let (mut read, mut written) = (Vec::new(), Vec::new());
        for stem in &test {
            let case = stem.file_name().expect("case stems have names").to_string_lossy().into_owned();
            let pred = layout.predictions("test").join(&case);
            let (r, w, _) = stages::dcca(cfg, &pred, &layout.dcca(&case))?;
            read.extend(r);
            written.extend(w);
        }
        Ok((read, written, ()))
    })?;

    let manifest = rec.finish()?;
    Ok(PipelineOutcome { manifest, metrics })
}
