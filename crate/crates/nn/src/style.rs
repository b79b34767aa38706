//! Style-transfer dual-layer training.
//!
//! Round 1 trains on the original data. Ground-truth struts it finds become
//! content regions and the ones it misses become style regions. Each content
//! patch is re-rendered with the texture statistics of a randomly paired
//! style patch (Gatys-style optimisation over pixels against a frozen
//! convolutional feature extractor), pasted back into a copy of its volume,
//! and round 2 continues training on originals plus challenged copies.

use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::{ImageBuffer, Luma};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use dcca_core::metrics::{extract_struts, match_struts, StrutInstance, MATCH_RADIUS_UM};
use dcca_core::{LabelVolume, Plane, Target, Volume};

use crate::checkpoint;
use crate::conv::ConvSpec;
use crate::data::{chunk_pair, Sample};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::infer::{infer_volume, threshold};
use crate::net::{build_network, NetConfig, SegNet};
use crate::params::{AdamConfig, ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::train::{train, TrainConfig, TrainOutcome};

/// Minimum region side in pixels.
pub const MIN_REGION: usize = 15;
/// Pixels added on every side of a strut's bounding box.
pub const REGION_MARGIN: usize = 3;
/// Feature widths of the extractor blocks.
pub const EXTRACTOR_WIDTHS: [usize; 4] = [8, 16, 32, 32];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NstConfig {
    /// Side length patches are resized to before optimisation.
    pub size: usize,
    pub iterations: usize,
    /// Adam step size on pixel values.
    pub lr: f64,
    pub content_weight: f64,
    pub style_weight: f64,
    /// Seed of the randomly initialised extractor when no weights file is given.
    pub extractor_seed: u64,
    /// Extractor weights in the `params.bin` format.
    pub extractor_weights: Option<PathBuf>,
    pub pairing_seed: u64,
    /// Upper bound on stylized content regions per run; all when absent.
    pub max_regions: Option<usize>,
}

impl Default for NstConfig {
    fn default() -> Self {
        NstConfig {
            size: 256,
            iterations: 200,
            lr: 0.02,
            content_weight: 1.0,
            style_weight: 1e3,
            extractor_seed: 0,
            extractor_weights: None,
            pairing_seed: 0,
            max_regions: None,
        }
    }
}

impl NstConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Style(m.into()));
        if self.size < 16 || !self.size.is_multiple_of(8) {
            return bad("size must be a multiple of 8 and at least 16");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(self.content_weight >= 0.0 && self.style_weight >= 0.0 && (self.content_weight + self.style_weight) > 0.0) {
            return bad("loss weights must be non-negative and not both zero");
        }
        Ok(())
    }
}

/// Frozen four-block 2D convolutional feature extractor.
#[derive(Debug, Clone)]
pub struct Extractor {
    store: ParamStore,
    convs: Vec<(ParamId, ParamId)>,
}

const EXTRACTOR_SPEC: ConvSpec = ConvSpec {
    kernel: [1, 3, 3],
    dilation: [1, 1, 1],
};

impl Extractor {
    /// He-initialised random weights.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut cin = 1;
        let mut convs = Vec::new();
        for (i, &cout) in EXTRACTOR_WIDTHS.iter().enumerate() {
            let k = cin * EXTRACTOR_SPEC.taps();
            let w = store.add_he(format!("extractor.block{}.w", i + 1), [cout, k, 1, 1], k, &mut rng);
            let b = store.add(format!("extractor.block{}.b", i + 1), Tensor::zeros([cout, 1, 1, 1]));
            convs.push((w, b));
            cin = cout;
        }
        Extractor { store, convs }
    }

    /// Weights from a `params.bin` archive with the same names and shapes.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let archive = checkpoint::decode_params(&bytes)?;
        let mut ext = Extractor::random(0);
        ext.store.load_values_from(&archive)?;
        Ok(ext)
    }

    pub fn from_config(cfg: &NstConfig) -> Result<Self> {
        match &cfg.extractor_weights {
            Some(p) => Extractor::load(p),
            None => Ok(Extractor::random(cfg.extractor_seed)),
        }
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    /// Post-ReLU activations of every block; blocks 2-4 start with a 2×2 max pool.
    fn features(&self, g: &mut Graph, x: NodeId) -> Vec<NodeId> {
        let mut h = x;
        let mut out = Vec::with_capacity(self.convs.len());
        for (i, &(w, b)) in self.convs.iter().enumerate() {
            if i > 0 {
                h = g.max_pool(h);
            }
            let (wn, bn) = (g.param(&self.store, w), g.param(&self.store, b));
            let c = g.conv(h, wn, Some(bn), EXTRACTOR_SPEC);
            h = g.relu(c);
            out.push(h);
        }
        out
    }
}

/// Bilinear resize.
pub fn resize(p: &Plane<f32>, nx: usize, ny: usize) -> Plane<f32> {
    if (p.nx, p.ny) == (nx, ny) {
        return p.clone();
    }
    let img = ImageBuffer::<Luma<f32>, Vec<f32>>::from_raw(p.nx as u32, p.ny as u32, p.data.clone())
        .expect("plane buffer matches its size");
    let out = imageops::resize(&img, nx as u32, ny as u32, FilterType::Triangle);
    Plane::new(nx, ny, out.into_raw())
}

fn plane_tensor(p: &Plane<f32>) -> Tensor {
    Tensor::new([1, 1, p.ny, p.nx], p.data.clone()).expect("plane shape")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NstLosses {
    pub content: f64,
    pub style: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct Stylized {
    /// Best iterate resized back to the content patch size.
    pub patch: Plane<f32>,
    pub initial: NstLosses,
    pub best: NstLosses,
}

impl Stylized {
    /// Whether the optimisation lowered the total loss at all.
    pub fn improved(&self) -> bool {
        self.best.total < self.initial.total
    }
}

struct NstTargets {
    content: Tensor,
    grams: Vec<Tensor>,
}

fn evaluate(ext: &Extractor, x: Tensor, t: &NstTargets, cfg: &NstConfig, grad: bool) -> (NstLosses, Option<Tensor>) {
    let mut g = Graph::new();
    let xi = if grad { g.input_with_grad(x) } else { g.input(x) };
    let feats = ext.features(&mut g, xi);
    let content = g.mse_to(*feats.last().expect("four blocks"), t.content.clone());
    let style_terms: Vec<NodeId> = feats
        .iter()
        .zip(&t.grams)
        .map(|(&f, target)| {
            let gram = g.gram(f);
            g.mse_to(gram, target.clone())
        })
        .collect();
    let style = g.sum_scalars(&style_terms);
    let wc = g.scale(content, cfg.content_weight as f32);
    let ws = g.scale(style, cfg.style_weight as f32);
    let total = g.add(wc, ws);
    let losses = NstLosses {
        content: g.value(content).item() as f64,
        style: g.value(style).item() as f64,
        total: g.value(total).item() as f64,
    };
    let dx = grad.then(|| {
        let grads = g.backward(total);
        grads.get(xi).cloned().unwrap_or_else(|| Tensor::zeros(g.shape(xi)))
    });
    (losses, dx)
}

/// Optimises pixels, starting from the content patch, to keep the content
/// patch's deep features while matching the style patch's Gram matrices.
/// Returns the best iterate seen.
pub fn stylize(content: &Plane<f32>, style: &Plane<f32>, cfg: &NstConfig, ext: &Extractor) -> Result<Stylized> {
    cfg.validate()?;
    stylize_from(content, content, style, cfg, ext)
}

/// As [`stylize`] but starting the optimisation from `init`.
pub fn stylize_from(
    init: &Plane<f32>,
    content: &Plane<f32>,
    style: &Plane<f32>,
    cfg: &NstConfig,
    ext: &Extractor,
) -> Result<Stylized> {
    cfg.validate()?;
    let n = cfg.size;
    let c = plane_tensor(&resize(content, n, n));
    let s = plane_tensor(&resize(style, n, n));
    let mut g = Graph::new();
    let ci = g.input(c);
    let content_feat = *ext.features(&mut g, ci).last().expect("four blocks");
    let si = g.input(s);
    let style_feats = ext.features(&mut g, si);
    let grams = style_feats
        .into_iter()
        .map(|f| {
            let gr = g.gram(f);
            g.value(gr).clone()
        })
        .collect();
    let targets = NstTargets {
        content: g.value(content_feat).clone(),
        grams,
    };
    let mut pixels = ParamStore::new();
    let pid = pixels.add("pixels", plane_tensor(&resize(init, n, n)));
    let adam = AdamConfig {
        lr: cfg.lr,
        ..Default::default()
    };
    let (initial, _) = evaluate(ext, pixels.value(pid).clone(), &targets, cfg, false);
    let mut best = (initial, pixels.value(pid).clone());
    for _ in 0..cfg.iterations {
        let (_, dx) = evaluate(ext, pixels.value(pid).clone(), &targets, cfg, true);
        *pixels.grad_mut(pid) = dx.expect("gradient requested");
        pixels.adam_step(&adam);
        pixels.value_mut(pid).data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        let (l, _) = evaluate(ext, pixels.value(pid).clone(), &targets, cfg, false);
        if l.total < best.0.total {
            best = (l, pixels.value(pid).clone());
        }
    }
    let out = Plane::new(n, n, best.1.into_data());
    Ok(Stylized {
        patch: resize(&out, content.nx, content.ny),
        initial,
        best: best.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionSource {
    Content,
    Style,
}

/// A box around one ground-truth strut in one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrutRegion {
    /// Index of the volume the region belongs to.
    pub case: usize,
    pub frame: usize,
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
    pub source: RegionSource,
}

impl StrutRegion {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..self.x0 + self.width).contains(&x) && (self.y0..self.y0 + self.height).contains(&y)
    }
}

/// Grows `[lo, hi]` to at least `min` samples inside `0..n`.
fn grow_axis(lo: usize, hi: usize, min: usize, n: usize) -> (usize, usize) {
    let mut lo = lo.saturating_sub(REGION_MARGIN);
    let mut hi = (hi + REGION_MARGIN).min(n - 1);
    while hi + 1 - lo < min {
        lo = lo.saturating_sub(1);
        if hi + 1 - lo < min && hi + 1 < n {
            hi += 1;
        }
    }
    (lo, hi + 1 - lo)
}

/// Region for a strut's inclusive bounding box: dilated by the margin, then
/// grown to the minimum side. `None` when the frame is too small.
pub fn region_box(bbox: [usize; 4], nx: usize, ny: usize) -> Option<[usize; 4]> {
    if nx < MIN_REGION || ny < MIN_REGION {
        return None;
    }
    let (x0, w) = grow_axis(bbox[0], bbox[2], MIN_REGION, nx);
    let (y0, h) = grow_axis(bbox[1], bbox[3], MIN_REGION, ny);
    Some([x0, y0, w, h])
}

/// Splits the ground-truth struts of one volume into content (matched by a
/// first-pass prediction under the centroid rule) and style (missed) regions.
/// Struts whose box would also contain another ground-truth strut are skipped.
pub fn harvest_regions(
    case: usize,
    first_pass: &LabelVolume,
    gt: &LabelVolume,
    image: &Volume,
) -> Result<(Vec<StrutRegion>, Vec<StrutRegion>)> {
    gt.ensure_same_shape(image.dims())?;
    first_pass.ensure_same_shape(image.dims())?;
    let gt_struts = extract_struts(gt);
    if gt_struts.is_empty() {
        return Err(Error::Core(dcca_core::Error::EmptyMask));
    }
    let pred = extract_struts(first_pass);
    let counts = match_struts(&pred, &gt_struts, MATCH_RADIUS_UM);
    let mut matched = vec![false; gt_struts.len()];
    for p in &counts.pairs {
        matched[p.gt] = true;
    }
    let [nx, ny, _] = gt.dims();
    let (mut content, mut style) = (Vec::new(), Vec::new());
    for (i, s) in gt_struts.iter().enumerate() {
        let Some([x0, y0, width, height]) = region_box(s.bbox(), nx, ny) else {
            continue;
        };
        let source = if matched[i] {
            RegionSource::Content
        } else {
            RegionSource::Style
        };
        let r = StrutRegion {
            case,
            frame: s.frame,
            x0,
            y0,
            width,
            height,
            source,
        };
        if contains_other_strut(&r, i, &gt_struts) {
            continue;
        }
        match source {
            RegionSource::Content => content.push(r),
            RegionSource::Style => style.push(r),
        }
    }
    Ok((content, style))
}

fn contains_other_strut(r: &StrutRegion, own: usize, struts: &[StrutInstance]) -> bool {
    struts
        .iter()
        .enumerate()
        .any(|(j, s)| j != own && s.frame == r.frame && s.voxels.iter().any(|&[x, y]| r.contains(x, y)))
}

pub fn crop(image: &Volume, r: &StrutRegion) -> Plane<f32> {
    let mut data = Vec::with_capacity(r.width * r.height);
    for y in r.y0..r.y0 + r.height {
        for x in r.x0..r.x0 + r.width {
            data.push(image.get(x, y, r.frame));
        }
    }
    Plane::new(r.width, r.height, data)
}

fn paste(data: &mut [f32], dims: [usize; 3], r: &StrutRegion, patch: &Plane<f32>) {
    let [nx, ny, _] = dims;
    for y in 0..r.height {
        for x in 0..r.width {
            data[(r.x0 + x) + nx * ((r.y0 + y) + ny * r.frame)] = patch.get(x, y);
        }
    }
}

/// For each content region, the index of its style partner: a seeded
/// permutation of the style list, cycled when there are more contents.
pub fn pair_regions(n_content: usize, n_style: usize, seed: u64) -> Vec<usize> {
    if n_style == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n_style).collect();
    let mut out = Vec::with_capacity(n_content);
    while out.len() < n_content {
        perm.shuffle(&mut rng);
        out.extend(perm.iter().take(n_content - out.len()));
    }
    out
}

/// An image with its single-target ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVolume {
    pub image: Volume,
    pub labels: LabelVolume,
}

#[derive(Debug, Clone)]
pub struct ChallengeSet {
    /// Originals followed by challenged copies of every volume that received
    /// at least one stylized patch.
    pub cases: Vec<LabeledVolume>,
    /// `(content region, style region)` pairs that were applied.
    pub pairs: Vec<(StrutRegion, StrutRegion)>,
    /// Stylizations whose optimisation did not lower the loss; the best
    /// iterate (the unchanged content) was used.
    pub not_improved: usize,
}

/// Pastes a stylized version of every content region into a copy of its
/// volume. Labels are never touched. Returns the input unchanged when there
/// are no content regions.
pub fn build_challenging_dataset(
    cases: &[LabeledVolume],
    content: &[StrutRegion],
    style: &[StrutRegion],
    cfg: &NstConfig,
    ext: &Extractor,
) -> Result<ChallengeSet> {
    cfg.validate()?;
    let mut out = ChallengeSet {
        cases: cases.to_vec(),
        pairs: Vec::new(),
        not_improved: 0,
    };
    if content.is_empty() {
        return Ok(out);
    }
    if style.is_empty() {
        return Err(Error::Style("no style regions to pair with".into()));
    }
    for r in content.iter().chain(style) {
        if r.case >= cases.len() {
            return Err(Error::Style(format!("region refers to missing volume {}", r.case)));
        }
    }
    let mut chosen: Vec<usize> = (0..content.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.pairing_seed);
    rng.set_stream(1);
    if let Some(cap) = cfg.max_regions {
        if cap < chosen.len() {
            chosen.shuffle(&mut rng);
            chosen.truncate(cap);
            chosen.sort_unstable();
        }
    }
    let partners = pair_regions(chosen.len(), style.len(), cfg.pairing_seed);
    let mut copies: Vec<Option<Vec<f32>>> = vec![None; cases.len()];
    for (&ci, &si) in chosen.iter().zip(&partners) {
        let (c, s) = (&content[ci], &style[si]);
        let result = stylize(&crop(&cases[c.case].image, c), &crop(&cases[s.case].image, s), cfg, ext)?;
        if !result.improved() {
            out.not_improved += 1;
        }
        let image = &cases[c.case].image;
        let data = copies[c.case].get_or_insert_with(|| image.data().to_vec());
        paste(data, image.dims(), c, &result.patch);
        out.pairs.push((*c, *s));
    }
    for (case, data) in copies.into_iter().enumerate() {
        if let Some(data) = data {
            let src = &cases[case];
            let image = Volume::new(src.image.dims(), data, src.image.spacing(), src.image.coord_system())?;
            out.cases.push(LabeledVolume {
                image,
                labels: src.labels.clone(),
            });
        }
    }
    Ok(out)
}

pub fn samples_of(cases: &[LabeledVolume], depth: usize) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for c in cases {
        out.extend(chunk_pair(&c.image, &c.labels, depth)?);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct StyleRound {
    pub outcome: TrainOutcome,
    pub content: Vec<StrutRegion>,
    pub style: Vec<StrutRegion>,
    pub challenge_pairs: usize,
    pub not_improved: usize,
}

#[derive(Debug, Clone)]
pub struct DualOutcome {
    pub round1: TrainOutcome,
    pub round2: StyleRound,
}

/// Binary prediction of `net` over a whole volume.
pub fn predict_mask(net: &SegNet, image: &Volume, cfg: &TrainConfig, target: Target) -> Result<LabelVolume> {
    let prob = infer_volume(net, image, cfg.chunk_depth, cfg.chunk_depth)?;
    threshold(&prob, cfg.threshold, target)
}

/// Second round: harvest with the first-round model `first` (binarised per
/// `first_cfg`) on the training cases, stylize, and continue training from
/// `first` on originals plus challenged copies. With no style regions this is
/// continued training on the originals.
pub fn style_round(
    first: &SegNet,
    first_cfg: &TrainConfig,
    cases: &[LabeledVolume],
    val: &[LabeledVolume],
    round2: &TrainConfig,
    nst: &NstConfig,
    out_dir: Option<&Path>,
) -> Result<StyleRound> {
    nst.validate()?;
    let (mut content, mut style) = (Vec::new(), Vec::new());
    for (i, c) in cases.iter().enumerate() {
        let pred = predict_mask(first, &c.image, first_cfg, c.labels.target())?;
        let (cn, st) = harvest_regions(i, &pred, &c.labels, &c.image)?;
        content.extend(cn);
        style.extend(st);
    }
    let (merged, challenge_pairs, not_improved) = if style.is_empty() {
        (cases.to_vec(), 0, 0)
    } else {
        let ext = Extractor::from_config(nst)?;
        let set = build_challenging_dataset(cases, &content, &style, nst, &ext)?;
        (set.cases, set.pairs.len(), set.not_improved)
    };
    let train2 = samples_of(&merged, round2.chunk_depth)?;
    let val2 = samples_of(val, round2.chunk_depth)?;
    let outcome = train(first.clone(), &train2, &val2, round2, out_dir)?;
    Ok(StyleRound {
        outcome,
        content,
        style,
        challenge_pairs,
        not_improved,
    })
}

/// Round 1 on `cases`, then [`style_round`] from its best weights.
/// Checkpoints go to `out_dir/round1` and `out_dir/round2`.
pub fn dual_layer_train(
    cases: &[LabeledVolume],
    val: &[LabeledVolume],
    net_cfg: &NetConfig,
    round1: &TrainConfig,
    round2: &TrainConfig,
    nst: &NstConfig,
    out_dir: Option<&Path>,
) -> Result<DualOutcome> {
    nst.validate()?;
    let train1 = samples_of(cases, round1.chunk_depth)?;
    let val1 = samples_of(val, round1.chunk_depth)?;
    let net = build_network(net_cfg, round1.seed)?;
    let sub = |name: &str| out_dir.map(|d| d.join(name));
    let r1 = train(net, &train1, &val1, round1, sub("round1").as_deref())?;
    let r2 = style_round(&r1.best, round1, cases, val, round2, nst, sub("round2").as_deref())?;
    Ok(DualOutcome { round1: r1, round2: r2 })
}
