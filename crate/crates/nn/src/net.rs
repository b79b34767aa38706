//! The 2.5D spatial-matching encoder-decoder.
//!
//! Six levels. Levels 1-4 use in-plane residual-a blocks (`1×3×3` kernels)
//! and halve the in-plane size after each level; levels 5-6 use volumetric
//! blocks (`3×3×3`) at 1/16 resolution. Depth is never resampled. A pyramid
//! pooling module sits at the bottleneck and another before the head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conv::ConvSpec;
use crate::error::{Error, Result};
use crate::graph::{sigmoid, Graph, NodeId};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

pub const LEVELS: usize = 6;
pub const LEVELS_2D: usize = 4;
pub const ALLOWED_DILATIONS: [usize; 4] = [1, 3, 15, 31];
/// In-plane size must be divisible by this.
pub const INPLANE_DIVISOR: usize = 1 << LEVELS_2D;
/// Initial scale of residual projections relative to He init.
pub const RESIDUAL_GAIN: f32 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub in_channels: usize,
    /// Per-level widths before `toy_scale`.
    pub channels: Vec<usize>,
    pub dilations: Vec<Vec<usize>>,
    pub ppm_bins: Vec<usize>,
    /// Divisor applied to every width (floored at 1).
    pub toy_scale: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            in_channels: 1,
            channels: vec![32, 64, 128, 256, 256, 256],
            dilations: vec![
                vec![1, 3],
                vec![1, 3],
                vec![1, 3, 15],
                vec![1, 3, 15],
                vec![1, 3, 15, 31],
                vec![1, 3, 15, 31],
            ],
            ppm_bins: vec![1, 2, 3, 6],
            toy_scale: 1,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::NetConfig(m));
        if self.in_channels == 0 {
            return bad("in_channels must be >= 1".into());
        }
        if self.channels.len() != LEVELS || self.dilations.len() != LEVELS {
            return bad(format!("exactly {LEVELS} levels of channels and dilations are required"));
        }
        if self.channels.contains(&0) || self.toy_scale == 0 {
            return bad("channel widths and toy_scale must be >= 1".into());
        }
        for (l, d) in self.dilations.iter().enumerate() {
            if d.is_empty() || d.iter().any(|v| !ALLOWED_DILATIONS.contains(v)) {
                return bad(format!("level {} dilations {d:?} must be a non-empty subset of {ALLOWED_DILATIONS:?}", l + 1));
            }
        }
        if self.ppm_bins.is_empty() || self.ppm_bins.contains(&0) {
            return bad("pyramid bins must be non-empty and >= 1".into());
        }
        Ok(())
    }

    /// Widths after `toy_scale`.
    pub fn widths(&self) -> Vec<usize> {
        self.channels.iter().map(|&c| (c / self.toy_scale).max(1)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockDims {
    /// Convolves height and width only.
    Planar,
    /// Convolves depth, height and width.
    Volumetric,
}

#[derive(Debug, Clone)]
struct Conv {
    w: ParamId,
    b: ParamId,
    spec: ConvSpec,
}

impl Conv {
    fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, spec: ConvSpec, rng: &mut ChaCha8Rng) -> Self {
        let k = cin * spec.taps();
        let w = store.add_he(format!("{name}.w"), [cout, k, 1, 1], k, rng);
        let b = store.add(format!("{name}.b"), Tensor::zeros([cout, 1, 1, 1]));
        Conv { w, b, spec }
    }

    /// He init shrunk by `gain`, so residual branches start close to identity.
    fn scaled(store: &mut ParamStore, name: &str, cin: usize, cout: usize, gain: f32, rng: &mut ChaCha8Rng) -> Self {
        let conv = Conv::new(store, name, cin, cout, ConvSpec::pointwise(), rng);
        store.value_mut(conv.w).data_mut().iter_mut().for_each(|v| *v *= gain);
        conv
    }

    fn apply(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> NodeId {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.conv(x, w, Some(b), self.spec)
    }

    fn cout(&self, store: &ParamStore) -> usize {
        store.value(self.w).shape()[0]
    }
}

fn planar(d: usize) -> ConvSpec {
    ConvSpec {
        kernel: [1, 3, 3],
        dilation: [1, d, d],
    }
}

/// Residual unit with parallel atrous branches:
/// `x + proj(concat_i(conv_{d_i}(relu(x))))`.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    branches: Vec<Conv>,
    proj: Conv,
    channels: usize,
}

impl ResidualBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        dilations: &[usize],
        dims: BlockDims,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let branches = dilations
            .iter()
            .map(|&d| {
                let spec = match dims {
                    BlockDims::Planar => planar(d),
                    BlockDims::Volumetric => ConvSpec {
                        kernel: [3, 3, 3],
                        dilation: [d, d, d],
                    },
                };
                Conv::new(store, &format!("{name}.d{d}"), channels, channels, spec, rng)
            })
            .collect::<Vec<_>>();
        let proj = Conv::scaled(store, &format!("{name}.proj"), channels * dilations.len(), channels, RESIDUAL_GAIN, rng);
        ResidualBlock { branches, proj, channels }
    }

    /// Parameter ids of the projection `(weight, bias)`.
    pub fn projection(&self) -> (ParamId, ParamId) {
        (self.proj.w, self.proj.b)
    }

    /// Parameter ids of each branch `(weight, bias)`.
    pub fn branches(&self) -> Vec<(ParamId, ParamId)> {
        self.branches.iter().map(|c| (c.w, c.b)).collect()
    }
}

pub fn residual_a_block(g: &mut Graph, store: &ParamStore, block: &ResidualBlock, x: NodeId) -> Result<NodeId> {
    let c = g.shape(x)[0];
    if c != block.channels || block.proj.cout(store) != c {
        return Err(Error::Shape(format!(
            "residual block expects {} channels, input has {c}",
            block.channels
        )));
    }
    let a = g.relu(x);
    let outs: Vec<NodeId> = block.branches.iter().map(|b| b.apply(g, store, a)).collect();
    let cat = if outs.len() == 1 { outs[0] } else { g.concat(&outs) };
    let p = block.proj.apply(g, store, cat);
    Ok(g.add(x, p))
}

/// Pyramid pooling: per bin, adaptive average pool, pointwise conv, ReLU,
/// broadcast back; concatenated with the input and projected to its width.
#[derive(Debug, Clone)]
pub struct PyramidPool {
    bins: Vec<usize>,
    branches: Vec<Conv>,
    proj: Conv,
}

impl PyramidPool {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, bins: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let reduced = (channels / bins.len()).max(1);
        let branches = bins
            .iter()
            .map(|b| Conv::new(store, &format!("{name}.bin{b}"), channels, reduced, ConvSpec::pointwise(), rng))
            .collect();
        let proj = Conv::new(
            store,
            &format!("{name}.proj"),
            channels + reduced * bins.len(),
            channels,
            ConvSpec::pointwise(),
            rng,
        );
        PyramidPool {
            bins: bins.to_vec(),
            branches,
            proj,
        }
    }
}

/// Applies `ppm` to `x`. Bins larger than an axis are an error unless
/// `clamp` is set, in which case they are limited to the axis length.
pub fn pyramid_pool(g: &mut Graph, store: &ParamStore, ppm: &PyramidPool, x: NodeId, clamp: bool) -> Result<NodeId> {
    let [_, d, h, w] = g.shape(x);
    let mut parts = vec![x];
    for (&b, conv) in ppm.bins.iter().zip(&ppm.branches) {
        let per_axis = [d, h, w].map(|n| if clamp { b.min(n) } else { b });
        if per_axis.iter().zip([d, h, w]).any(|(&bb, n)| bb > n) {
            return Err(Error::Shape(format!("pyramid bin {b} exceeds feature map {d}x{h}x{w}")));
        }
        let pooled = g.avg_pool_bins(x, per_axis);
        let c = conv.apply(g, store, pooled);
        let r = g.relu(c);
        parts.push(g.bin_upsample(r, [d, h, w]));
    }
    let cat = g.concat(&parts);
    Ok(ppm.proj.apply(g, store, cat))
}

#[derive(Debug, Clone)]
struct Level {
    /// Width change (and in-plane downsampling before it, levels 2-5).
    enter: Option<Conv>,
    block: ResidualBlock,
}

#[derive(Debug, Clone)]
struct DecoderLevel {
    fuse: Conv,
    block: ResidualBlock,
}

/// A built network: configuration, parameters and their wiring.
#[derive(Debug, Clone)]
pub struct SegNet {
    cfg: NetConfig,
    params: ParamStore,
    stem: Conv,
    encoder: Vec<Level>,
    bottleneck: PyramidPool,
    decoder: Vec<DecoderLevel>,
    final_ppm: PyramidPool,
    head: Conv,
}

fn level_dims(level: usize) -> BlockDims {
    if level < LEVELS_2D {
        BlockDims::Planar
    } else {
        BlockDims::Volumetric
    }
}

/// Builds the network with He-initialised weights drawn from `seed`.
pub fn build_network(cfg: &NetConfig, seed: u64) -> Result<SegNet> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let c = cfg.widths();
    let stem = Conv::new(&mut store, "stem", cfg.in_channels, c[0], planar(1), &mut rng);
    let mut encoder = Vec::with_capacity(LEVELS);
    for l in 0..LEVELS {
        let enter = (l > 0).then(|| Conv::new(&mut store, &format!("enc{}.enter", l + 1), c[l - 1], c[l], planar(1), &mut rng));
        let block = ResidualBlock::new(&mut store, &format!("enc{}", l + 1), c[l], &cfg.dilations[l], level_dims(l), &mut rng);
        encoder.push(Level { enter, block });
    }
    let bottleneck = PyramidPool::new(&mut store, "ppm.bottleneck", c[LEVELS - 1], &cfg.ppm_bins, &mut rng);
    let mut decoder = Vec::with_capacity(LEVELS - 1);
    for l in (0..LEVELS - 1).rev() {
        let fuse = Conv::new(&mut store, &format!("dec{}.fuse", l + 1), c[l + 1] + c[l], c[l], planar(1), &mut rng);
        let block = ResidualBlock::new(&mut store, &format!("dec{}", l + 1), c[l], &cfg.dilations[l], level_dims(l), &mut rng);
        decoder.push(DecoderLevel { fuse, block });
    }
    let final_ppm = PyramidPool::new(&mut store, "ppm.final", c[0], &cfg.ppm_bins, &mut rng);
    let head = Conv::new(&mut store, "head", c[0], 1, ConvSpec::pointwise(), &mut rng);
    Ok(SegNet {
        cfg: cfg.clone(),
        params: store,
        stem,
        encoder,
        bottleneck,
        decoder,
        final_ppm,
        head,
    })
}

impl SegNet {
    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Checks an input shape `[C, D, H, W]` against the network contract.
    pub fn check_input(&self, shape: [usize; 4]) -> Result<()> {
        let [c, d, h, w] = shape;
        if c != self.cfg.in_channels {
            return Err(Error::Shape(format!("expected {} input channels, got {c}", self.cfg.in_channels)));
        }
        if d == 0 || h == 0 || w == 0 || h % INPLANE_DIVISOR != 0 || w % INPLANE_DIVISOR != 0 {
            return Err(Error::Shape(format!(
                "in-plane size {h}x{w} must be non-zero multiples of {INPLANE_DIVISOR} (depth {d})"
            )));
        }
        Ok(())
    }

    /// Appends the forward pass to `g` and returns the logits node `[1, D, H, W]`.
    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        self.check_input(g.shape(x))?;
        let p = &self.params;
        let mut h = self.stem.apply(g, p, x);
        let mut skips = Vec::with_capacity(LEVELS);
        for (l, level) in self.encoder.iter().enumerate() {
            if let Some(enter) = &level.enter {
                if l <= LEVELS_2D {
                    h = g.max_pool(h);
                }
                h = enter.apply(g, p, h);
            }
            h = residual_a_block(g, p, &level.block, h)?;
            skips.push(h);
        }
        let mut d = pyramid_pool(g, p, &self.bottleneck, h, true)?;
        for (dec, l) in self.decoder.iter().zip((0..LEVELS - 1).rev()) {
            if l < LEVELS_2D {
                d = g.upsample(d);
            }
            let cat = g.concat(&[d, skips[l]]);
            d = dec.fuse.apply(g, p, cat);
            d = residual_a_block(g, p, &dec.block, d)?;
        }
        d = pyramid_pool(g, p, &self.final_ppm, d, true)?;
        let a = g.relu(d);
        Ok(self.head.apply(g, p, a))
    }

    /// Probabilities for one `[C, D, H, W]` input.
    pub fn predict(&self, input: Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.input(input);
        let logits = self.forward(&mut g, x)?;
        let mut out = g.value(logits).clone();
        out.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> NetConfig {
        NetConfig {
            toy_scale: 16,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = build_network(&NetConfig::default(), 7).unwrap();
        let b = build_network(&NetConfig::default(), 7).unwrap();
        assert_eq!(a.param_count(), b.param_count());
        assert_eq!(a.params(), b.params());
        let c = build_network(&NetConfig::default(), 8).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn toy_scale_shrinks_the_network() {
        let full = build_network(&NetConfig::default(), 0).unwrap();
        let small = build_network(&NetConfig { toy_scale: 8, ..Default::default() }, 0).unwrap();
        assert!(small.param_count() < full.param_count());
    }

    #[test]
    fn forward_on_zeros_is_a_probability_map() {
        let net = build_network(&toy(), 1).unwrap();
        let out = net.predict(Tensor::zeros([1, 4, 32, 32])).unwrap();
        assert_eq!(out.shape(), [1, 4, 32, 32]);
        assert!(out.data().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
    }

    #[test]
    fn rejects_bad_configs_and_inputs() {
        let mut cfg = NetConfig::default();
        cfg.dilations[0] = vec![2];
        assert!(build_network(&cfg, 0).is_err());
        let mut cfg = NetConfig::default();
        cfg.channels.pop();
        assert!(build_network(&cfg, 0).is_err());
        let net = build_network(&toy(), 0).unwrap();
        assert!(net.predict(Tensor::zeros([1, 4, 24, 24])).is_err());
        assert!(net.predict(Tensor::zeros([2, 4, 32, 32])).is_err());
    }

    #[test]
    fn block_preserves_shape_in_both_variants() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        for dims in [BlockDims::Planar, BlockDims::Volumetric] {
            let block = ResidualBlock::new(&mut store, "b", 3, &[1, 3, 15, 31], dims, &mut rng);
            let mut g = Graph::new();
            let x = g.input(Tensor::filled([3, 5, 8, 8], 0.5));
            let y = residual_a_block(&mut g, &store, &block, x).unwrap();
            assert_eq!(g.shape(y), [3, 5, 8, 8]);
            let wrong = g.input(Tensor::zeros([2, 5, 8, 8]));
            assert!(residual_a_block(&mut g, &store, &block, wrong).is_err());
        }
    }

    #[test]
    fn identity_projection_gives_x_plus_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let block = ResidualBlock::new(&mut store, "b", 2, &[1], BlockDims::Planar, &mut rng);
        let (pw, pb) = block.projection();
        let eye = Tensor::new([2, 2, 1, 1], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        *store.value_mut(pw) = eye;
        *store.value_mut(pb) = Tensor::zeros([2, 1, 1, 1]);
        let (bw, bb) = block.branches()[0];
        let x = Tensor::new([2, 2, 4, 4], (0..64).map(|i| (i % 7) as f32 / 7.0).collect()).unwrap();
        let mut g = Graph::new();
        let xi = g.input(x.clone());
        let y = residual_a_block(&mut g, &store, &block, xi).unwrap();
        let (wi, bi) = (g.param(&store, bw), g.param(&store, bb));
        // x is non-negative, so the pre-activation ReLU is the identity
        let c = g.conv(xi, wi, Some(bi), planar(1));
        let expect = g.add(xi, c);
        for (a, b) in g.value(y).data().iter().zip(g.value(expect).data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn receptive_field_of_widest_block() {
        let widest = *ALLOWED_DILATIONS.iter().max().unwrap();
        // a 3-tap kernel at dilation d spans 2d + 1 samples
        assert!(2 * widest + 1 >= 63);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let block = ResidualBlock::new(&mut store, "b", 1, &[1, 3, 15, 31], BlockDims::Planar, &mut rng);
        // an impulse reaches 31 pixels away through the widest branch
        let run = |impulse: bool| {
            let mut x = Tensor::zeros([1, 1, 64, 64]);
            if impulse {
                let centre = x.index(0, 0, 32, 32);
                x.data_mut()[centre] = 1.0;
            }
            let mut g = Graph::new();
            let xi = g.input(x);
            let y = residual_a_block(&mut g, &store, &block, xi).unwrap();
            g.value(y).get(0, 0, 32, 1)
        };
        assert_ne!(run(true), run(false));
    }

    #[test]
    fn pyramid_pool_shape_and_constant_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let ppm = PyramidPool::new(&mut store, "p", 4, &[1, 2, 3, 6], &mut rng);
        let mut g = Graph::new();
        let mut x = Tensor::zeros([4, 6, 6, 6]);
        for c in 0..4 {
            x.data_mut()[c * 216..(c + 1) * 216].iter_mut().for_each(|v| *v = c as f32 * 0.3 - 0.2);
        }
        let xi = g.input(x);
        let y = pyramid_pool(&mut g, &store, &ppm, xi, false).unwrap();
        assert_eq!(g.shape(y), [4, 6, 6, 6]);
        for c in 0..4 {
            let vals = &g.value(y).data()[c * 216..(c + 1) * 216];
            assert!(vals.iter().all(|&v| (v - vals[0]).abs() < 1e-6));
        }
        let small = g.input(Tensor::zeros([4, 4, 4, 4]));
        assert!(pyramid_pool(&mut g, &store, &ppm, small, false).is_err());
        assert!(pyramid_pool(&mut g, &store, &ppm, small, true).is_ok());
    }
}
