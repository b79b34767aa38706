//! Pipeline stages. Each reads containers or checkpoints from disk, writes
//! its artifacts, and reports the files it touched.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use dcca_core::augment::window_pullback;
use dcca_core::container::{self, label_stem, load_labels, load_volume, meta_path, raw_path, save_labels, save_with_labels};
use dcca_core::dcca::{apposition_report, color_stents, distance_field, export_ply, lumen_mesh, lumen_ply_payload};
use dcca_core::metrics::{
    extract_struts, match_struts, mean_std, strut_metrics, voxel_metrics, MeanStd, StrutScores, VoxelScores,
    MATCH_RADIUS_UM,
};
use dcca_core::phantom::{desk_spec, generate_phantom, Apposition, PhantomSpec, Segment};
use dcca_core::scan::{labels_to_cartesian, volume_to_cartesian};
use dcca_core::{CoordSystem, LabelVolume, Target, Volume};
use dcca_nn::checkpoint;
use dcca_nn::infer::{infer_volume, threshold};
use dcca_nn::net::build_network;
use dcca_nn::style::{samples_of, style_round, LabeledVolume, StyleRound};
use dcca_nn::train::{train, TrainOutcome};

use crate::config::RunConfig;

pub const SPLITS: [&str; 4] = ["train", "val", "test", "dim"];
pub const METRICS_FILE: &str = "metrics.json";
pub const APPOSITION_FILE: &str = "apposition.json";
pub const STENT_PLY: &str = "stent.ply";
pub const LUMEN_PLY: &str = "lumen.ply";
pub const STYLE_SUMMARY_FILE: &str = "style_summary.json";

/// Region bookkeeping of a style-transfer round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleSummary {
    pub content_regions: usize,
    pub style_regions: usize,
    pub challenge_pairs: usize,
    pub not_improved: usize,
    pub best_epoch: usize,
}

/// Files written for `(inputs, outputs, value)` stage results.
pub type Touched<T> = (Vec<PathBuf>, Vec<PathBuf>, T);

fn container_files(stem: &Path) -> [PathBuf; 2] {
    [meta_path(stem), raw_path(stem)]
}

fn is_label_stem(stem: &Path) -> bool {
    let s = stem.to_string_lossy();
    [Target::Stent, Target::Lumen]
        .iter()
        .any(|t| s.ends_with(&format!(".{}", t.as_str())))
}

/// Image container stems under `path`: every non-label container of a
/// directory, sorted, or `path` itself.
pub fn image_stems(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![container::container_stem(path)]);
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(path).with_context(|| format!("listing {}", path.display()))? {
        let p = entry?.path();
        if p.extension().is_some_and(|e| e == "meta") {
            let stem = container::container_stem(&p);
            if !is_label_stem(&stem) {
                out.push(stem);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn case_name(stem: &Path) -> String {
    stem.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Random desk-scale pullback: lumen profile, helix and an optional
/// malapposed or covered segment.
pub fn random_spec(frames: usize, strut_level: f64, segment_probability: f64, rng: &mut ChaCha8Rng) -> PhantomSpec {
    let mut spec = desk_spec(frames, rng.random());
    let f = frames as f64;
    spec.lumen.knots = vec![
        [0.0, rng.random_range(0.75..0.9)],
        [f / 2.0, rng.random_range(0.75..0.9)],
        [f, rng.random_range(0.75..0.9)],
    ];
    spec.lumen.ellipticity = rng.random_range(0.0..0.06);
    spec.lumen.ellipse_angle_deg = rng.random_range(0.0..180.0);
    spec.stent.struts_per_turn = rng.random_range(6..=9);
    spec.stent.pitch_frames = rng.random_range(16.0..32.0);
    spec.optics.strut_level = strut_level;
    if frames >= 4 && rng.random_bool(segment_probability) {
        let len = rng.random_range(frames / 4..=frames / 2);
        let start = rng.random_range(0..=frames - len);
        let mode = if rng.random_bool(0.5) {
            Apposition::Malapposed {
                gap_mm: rng.random_range(0.2..0.45),
            }
        } else {
            Apposition::Covered {
                thickness_mm: rng.random_range(0.15..0.35),
            }
        };
        spec.segments = vec![Segment {
            start,
            end: start + len,
            mode,
        }];
    }
    spec
}

/// Renders every split into `out/<split>/case_NNN` polar containers with
/// paired stent and lumen masks.
pub fn synth(cfg: &RunConfig, out: &Path) -> Result<Touched<()>> {
    let s = &cfg.synth;
    let counts = [s.train_cases, s.val_cases, s.test_cases, s.dim_cases];
    let mut written = Vec::new();
    for (k, (split, &n)) in SPLITS.iter().zip(&counts).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(k as u64);
        for i in 0..n {
            let level = match *split {
                "train" => s.strut_levels[i % s.strut_levels.len()],
                "dim" => s.dim_strut_level,
                _ => 1.0,
            };
            let spec = random_spec(s.frames, level, s.segment_probability, &mut rng);
            let p = generate_phantom(&spec)?;
            let stem = out.join(split).join(format!("case_{i:03}"));
            save_with_labels(&p.image, &[&p.stent, &p.lumen], &stem)?;
            for t in [None, Some(Target::Stent), Some(Target::Lumen)] {
                let st = t.map_or_else(|| stem.clone(), |t| label_stem(&stem, t));
                written.extend(container_files(&st));
            }
        }
    }
    Ok((Vec::new(), written, ()))
}

/// Sliding-window copies of every polar pullback in `inputs`, at offsets
/// drawn from the run seed, written to `out/<case>_wK`.
pub fn augment(cfg: &RunConfig, inputs: &[PathBuf], out: &Path) -> Result<Touched<()>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SPLITS.len() as u64);
    let (mut read, mut written) = (Vec::new(), Vec::new());
    for stem in inputs {
        let loaded = load_volume(stem)?;
        read.extend(container_files(stem));
        let labels: Vec<&LabelVolume> = loaded.stent.iter().chain(loaded.lumen.iter()).collect();
        let w = loaded.volume.dims()[1];
        if loaded.volume.coord_system() != CoordSystem::Polar || w < 2 {
            bail!("{} is not a polar pullback with at least two A-lines", stem.display());
        }
        for k in 0..cfg.augment.windows_per_case {
            let offset = rng.random_range(1..w);
            let (image, out_labels) = window_pullback(&loaded.volume, &labels, offset)?;
            let dst = out.join(format!("{}_w{k}", case_name(stem)));
            let refs: Vec<&LabelVolume> = out_labels.iter().collect();
            save_with_labels(&image, &refs, &dst)?;
            written.extend(container_files(&dst));
            for l in &out_labels {
                written.extend(container_files(&label_stem(&dst, l.target())));
            }
        }
    }
    Ok((read, written, ()))
}

fn cartesian(v: Volume, size: usize) -> Result<Volume> {
    Ok(match v.coord_system() {
        CoordSystem::Polar => volume_to_cartesian(&v, size)?,
        CoordSystem::Cartesian => v,
    })
}

fn cartesian_labels(l: LabelVolume, size: usize) -> Result<LabelVolume> {
    Ok(match l.coord_system() {
        CoordSystem::Polar => labels_to_cartesian(&l, size)?,
        CoordSystem::Cartesian => l,
    })
}

/// Image and `target` mask of a container, scan-converted when polar.
pub fn load_case(stem: &Path, target: Target, size: usize) -> Result<LabeledVolume> {
    let loaded = load_volume(stem)?;
    let labels = match target {
        Target::Stent => loaded.stent,
        Target::Lumen => loaded.lumen,
    }
    .ok_or_else(|| anyhow!("{} has no {} mask", stem.display(), target.as_str()))?;
    Ok(LabeledVolume {
        image: cartesian(loaded.volume, size)?,
        labels: cartesian_labels(labels, size)?,
    })
}

fn load_cases(stems: &[PathBuf], target: Target, size: usize) -> Result<Vec<LabeledVolume>> {
    stems.iter().map(|s| load_case(s, target, size)).collect()
}

fn read_files(stems: &[PathBuf], target: Target) -> Vec<PathBuf> {
    stems
        .iter()
        .flat_map(|s| {
            let mut f = container_files(s).to_vec();
            f.extend(container_files(&label_stem(s, target)));
            f
        })
        .collect()
}

fn checkpoint_files(dir: &Path) -> Vec<PathBuf> {
    [checkpoint::PARAMS_FILE, checkpoint::CONFIG_FILE, checkpoint::LOG_FILE]
        .iter()
        .map(|f| dir.join(f))
        .collect()
}

fn train_config(cfg: &RunConfig, target: Target) -> &dcca_nn::train::TrainConfig {
    match target {
        Target::Stent => &cfg.stent,
        Target::Lumen => &cfg.lumen,
    }
}

/// Single-round training of a `target` model, optionally starting from the
/// weights of an existing checkpoint.
pub fn train_model(
    cfg: &RunConfig,
    target: Target,
    train_stems: &[PathBuf],
    val_stems: &[PathBuf],
    out: &Path,
    init: Option<&Path>,
) -> Result<Touched<TrainOutcome>> {
    let tc = train_config(cfg, target);
    let size = cfg.infer.cartesian_size;
    let train_set = samples_of(&load_cases(train_stems, target, size)?, tc.chunk_depth)?;
    let val_set = samples_of(&load_cases(val_stems, target, size)?, tc.chunk_depth)?;
    let mut read = read_files(train_stems, target);
    read.extend(read_files(val_stems, target));
    let net = match init {
        Some(dir) => {
            read.extend(checkpoint_files(dir));
            checkpoint::load(dir)?.net
        }
        None => build_network(&cfg.net, tc.seed)?,
    };
    let outcome = train(net, &train_set, &val_set, tc, Some(out))?;
    Ok((read, checkpoint_files(out), outcome))
}

/// Second stent round: harvest with the round-1 checkpoint, stylize, and
/// continue training into `out`.
pub fn style_train(
    cfg: &RunConfig,
    round1: &Path,
    train_stems: &[PathBuf],
    val_stems: &[PathBuf],
    out: &Path,
) -> Result<Touched<StyleRound>> {
    let size = cfg.infer.cartesian_size;
    let first = checkpoint::load(round1)?;
    let cases = load_cases(train_stems, Target::Stent, size)?;
    let val = load_cases(val_stems, Target::Stent, size)?;
    let mut read = checkpoint_files(round1);
    read.extend(read_files(train_stems, Target::Stent));
    read.extend(read_files(val_stems, Target::Stent));
    let r = style_round(&first.net, &first.train, &cases, &val, &cfg.style.round2, &cfg.style.nst, Some(out))?;
    let summary = StyleSummary {
        content_regions: r.content.len(),
        style_regions: r.style.len(),
        challenge_pairs: r.challenge_pairs,
        not_improved: r.not_improved,
        best_epoch: r.outcome.best_epoch,
    };
    let mut written = checkpoint_files(out);
    written.push(write_json(&summary, &out.join(STYLE_SUMMARY_FILE))?);
    Ok((read, written, r))
}

/// Predicted `target` masks for every image stem, written as
/// `out/<case>.<target>` label containers.
pub fn infer(
    cfg: &RunConfig,
    ckpt_dir: &Path,
    stems: &[PathBuf],
    target: Target,
    stride: Option<usize>,
    out: &Path,
) -> Result<Touched<()>> {
    let ck = checkpoint::load(ckpt_dir)?;
    let chunk = ck.train.chunk_depth;
    let stride = stride.or(cfg.infer.stride).unwrap_or(chunk).min(chunk);
    let mut read = checkpoint_files(ckpt_dir);
    let mut written = Vec::new();
    for stem in stems {
        let v = cartesian(load_volume(stem)?.volume, cfg.infer.cartesian_size)?;
        read.extend(container_files(stem));
        let prob = infer_volume(&ck.net, &v, chunk, stride)?;
        let mask = threshold(&prob, ck.train.threshold, target)?;
        let dst = label_stem(&out.join(case_name(stem)), target);
        save_labels(&mask, &dst)?;
        written.extend(container_files(&dst));
    }
    Ok((read, written, ()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub case: String,
    pub struts: Option<Counts>,
    pub strut_scores: Option<StrutScores>,
    pub lumen: Option<VoxelScores>,
}

/// Strut counts pooled over the cases, scores of the pooled counts, and the
/// per-case lumen Dice summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub cases: Vec<CaseMetrics>,
    pub struts: Option<Counts>,
    pub strut_scores: Option<StrutScores>,
    pub lumen_dice: Option<MeanStd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub match_radius_um: f64,
    pub test: SplitMetrics,
    /// Dim-strut pullbacks under the first- and second-round stent models.
    pub dim_round1: Option<SplitMetrics>,
    pub dim_round2: Option<SplitMetrics>,
}

fn truth(stem: &Path, target: Target, dims: [usize; 3]) -> Result<LabelVolume> {
    let gt = load_labels(&label_stem(stem, target))?;
    let gt = if gt.coord_system() == CoordSystem::Polar {
        labels_to_cartesian(&gt, dims[0])?
    } else {
        gt
    };
    gt.ensure_same_shape(dims)?;
    Ok(gt)
}

/// Scores whichever predictions exist in `pred_dir` against the ground truth
/// of every image stem.
pub fn evaluate(truth_stems: &[PathBuf], pred_dir: &Path) -> Result<Touched<SplitMetrics>> {
    let (mut read, mut cases) = (Vec::new(), Vec::new());
    let mut pooled: Option<Counts> = None;
    for stem in truth_stems {
        let name = case_name(stem);
        let mut case = CaseMetrics {
            case: name.clone(),
            struts: None,
            strut_scores: None,
            lumen: None,
        };
        for target in [Target::Stent, Target::Lumen] {
            let pred_stem = label_stem(&pred_dir.join(&name), target);
            if !meta_path(&pred_stem).is_file() {
                continue;
            }
            let pred = load_labels(&pred_stem)?;
            let gt = truth(stem, target, pred.dims())?;
            read.extend(container_files(&pred_stem));
            read.extend(container_files(&label_stem(stem, target)));
            match target {
                Target::Stent => {
                    let m = match_struts(&extract_struts(&pred), &extract_struts(&gt), MATCH_RADIUS_UM);
                    let c = Counts {
                        tp: m.tp,
                        fp: m.fp,
                        fn_: m.fn_,
                    };
                    let p = pooled.get_or_insert(Counts { tp: 0, fp: 0, fn_: 0 });
                    p.tp += c.tp;
                    p.fp += c.fp;
                    p.fn_ += c.fn_;
                    case.struts = Some(c);
                    case.strut_scores = Some(strut_metrics(&m));
                }
                Target::Lumen => case.lumen = Some(voxel_metrics(&pred, &gt)?),
            }
        }
        cases.push(case);
    }
    if cases.iter().all(|c| c.struts.is_none() && c.lumen.is_none()) {
        bail!("no predictions found in {}", pred_dir.display());
    }
    let strut_scores = pooled.map(|c| {
        strut_metrics(&dcca_core::metrics::MatchCounts {
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            pairs: Vec::new(),
        })
    });
    let lumen_dice = mean_std(cases.iter().map(|c| c.lumen.and_then(|l| l.dice)));
    Ok((
        read,
        Vec::new(),
        SplitMetrics {
            cases,
            struts: pooled,
            strut_scores,
            lumen_dice,
        },
    ))
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<PathBuf> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(path.to_path_buf())
}

/// Distance-colour-coded assessment of one case's predicted masks: the
/// apposition report, coloured stent points and the lumen surface mesh.
pub fn dcca(cfg: &RunConfig, pred_stem: &Path, out: &Path) -> Result<Touched<()>> {
    let stent_stem = label_stem(pred_stem, Target::Stent);
    let lumen_stem = label_stem(pred_stem, Target::Lumen);
    let stent = load_labels(&stent_stem)?;
    let lumen = load_labels(&lumen_stem)?;
    let mut read = container_files(&stent_stem).to_vec();
    read.extend(container_files(&lumen_stem));
    let df = distance_field(&lumen)?;
    let report = apposition_report(&stent, &lumen, &df, &cfg.dcca)?;
    let points = color_stents(&stent, &df, &cfg.dcca)?;
    let mesh = lumen_mesh(&lumen)?;
    let (lv, lc) = lumen_ply_payload(&mesh);
    let written = vec![
        write_json(&report, &out.join(APPOSITION_FILE))?,
        {
            let p = out.join(STENT_PLY);
            export_ply(&p, &points.positions_f32(), &points.rgba, None)?;
            p
        },
        {
            let p = out.join(LUMEN_PLY);
            export_ply(&p, &lv, &lc, Some(&mesh.faces))?;
            p
        },
    ];
    Ok((read, written, ()))
}
