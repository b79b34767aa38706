//! Define-by-run reverse-mode autodiff tape.
//!
//! Every op appends a node holding its output value. [`Graph::backward`]
//! walks the tape in reverse and returns gradients for every node that the
//! loss depends on.

use crate::conv::{self, ConvSpec};
use crate::loss::{seg_loss_grad, seg_loss_value, LossConfig};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Conv { x: NodeId, w: NodeId, b: Option<NodeId>, spec: ConvSpec },
    Add(NodeId, NodeId),
    Scale(NodeId, f32),
    Relu(NodeId),
    Sigmoid(NodeId),
    /// In-plane 2×2 max pooling; `argmax` holds the flat source index per output.
    MaxPool { x: NodeId, argmax: Vec<u32> },
    /// In-plane ×2 nearest upsampling.
    Upsample(NodeId),
    Concat(Vec<NodeId>),
    AvgPoolBins { x: NodeId, bins: [usize; 3] },
    BinUpsample { x: NodeId, bins: [usize; 3] },
    Gram(NodeId),
    MseTo { x: NodeId, target: Tensor },
    SegLoss { logits: NodeId, target: Tensor, cfg: LossConfig },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grad_inputs: Vec<NodeId>,
}

/// Gradients indexed by node; `None` where the loss does not depend on the node.
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }
}

/// Adaptive pooling cell `i` of `b` over `n` samples: `floor(i·n/b)..ceil((i+1)·n/b)`.
pub fn bin_range(i: usize, b: usize, n: usize) -> (usize, usize) {
    (i * n / b, ((i + 1) * n).div_ceil(b))
}

/// The cell a sample belongs to when broadcasting back.
#[inline]
pub fn bin_of(p: usize, b: usize, n: usize) -> usize {
    p * b / n
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id.0].value.shape()
    }

    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    pub fn conv(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, spec: ConvSpec) -> NodeId {
        let y = conv::forward(self.value(x), self.value(w), b.map(|b| self.value(b)), &spec);
        self.push(y, Op::Conv { x, w, b, spec })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "add: shapes differ");
        let mut y = self.value(a).clone();
        y.add_assign(self.value(b));
        self.push(y, Op::Add(a, b))
    }

    pub fn scale(&mut self, x: NodeId, s: f32) -> NodeId {
        let mut y = self.value(x).clone();
        y.data_mut().iter_mut().for_each(|v| *v *= s);
        self.push(y, Op::Scale(x, s))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let mut y = self.value(x).clone();
        // NaN passes through so that divergence reaches the loss
        y.data_mut().iter_mut().for_each(|v| {
            if *v < 0.0 {
                *v = 0.0
            }
        });
        self.push(y, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let mut y = self.value(x).clone();
        y.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
        self.push(y, Op::Sigmoid(x))
    }

    pub fn max_pool(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let [c, d, h, w] = xv.shape();
        assert!(h % 2 == 0 && w % 2 == 0, "max_pool needs even in-plane size, got {h}x{w}");
        let (oh, ow) = (h / 2, w / 2);
        let mut y = Tensor::zeros([c, d, oh, ow]);
        let mut argmax = Vec::with_capacity(y.len());
        let src = xv.data();
        for cd in 0..c * d {
            for i in 0..oh {
                for j in 0..ow {
                    let base = cd * h * w;
                    let cands = [
                        base + 2 * i * w + 2 * j,
                        base + 2 * i * w + 2 * j + 1,
                        base + (2 * i + 1) * w + 2 * j,
                        base + (2 * i + 1) * w + 2 * j + 1,
                    ];
                    let mut best = cands[0];
                    for &k in &cands[1..] {
                        if src[k] > src[best] {
                            best = k;
                        }
                    }
                    y.data_mut()[(cd * oh + i) * ow + j] = src[best];
                    argmax.push(best as u32);
                }
            }
        }
        self.push(y, Op::MaxPool { x, argmax })
    }

    pub fn upsample(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let [c, d, h, w] = xv.shape();
        let mut y = Tensor::zeros([c, d, 2 * h, 2 * w]);
        let (src, dst) = (xv.data(), y.data_mut());
        for cd in 0..c * d {
            for i in 0..2 * h {
                for j in 0..2 * w {
                    dst[(cd * 2 * h + i) * 2 * w + j] = src[(cd * h + i / 2) * w + j / 2];
                }
            }
        }
        self.push(y, Op::Upsample(x))
    }

    pub fn concat(&mut self, xs: &[NodeId]) -> NodeId {
        let [_, d, h, w] = self.shape(xs[0]);
        let mut data = Vec::new();
        let mut c = 0;
        for &x in xs {
            let s = self.shape(x);
            assert_eq!(&s[1..], &[d, h, w], "concat: spatial shapes differ");
            c += s[0];
            data.extend_from_slice(self.value(x).data());
        }
        let y = Tensor::new([c, d, h, w], data).expect("concat shape");
        self.push(y, Op::Concat(xs.to_vec()))
    }

    /// Adaptive average pooling to `bins = [bd, bh, bw]` cells per axis.
    pub fn avg_pool_bins(&mut self, x: NodeId, bins: [usize; 3]) -> NodeId {
        let xv = self.value(x);
        let [c, d, h, w] = xv.shape();
        let n = [d, h, w];
        assert!(bins.iter().zip(&n).all(|(&b, &n)| b >= 1 && b <= n), "bins {bins:?} exceed {n:?}");
        let mut y = Tensor::zeros([c, bins[0], bins[1], bins[2]]);
        for ch in 0..c {
            for bd in 0..bins[0] {
                let (d0, d1) = bin_range(bd, bins[0], d);
                for bh in 0..bins[1] {
                    let (h0, h1) = bin_range(bh, bins[1], h);
                    for bw in 0..bins[2] {
                        let (w0, w1) = bin_range(bw, bins[2], w);
                        let mut acc = 0.0f64;
                        for z in d0..d1 {
                            for yy in h0..h1 {
                                for xx in w0..w1 {
                                    acc += xv.get(ch, z, yy, xx) as f64;
                                }
                            }
                        }
                        let count = ((d1 - d0) * (h1 - h0) * (w1 - w0)) as f64;
                        let i = y.index(ch, bd, bh, bw);
                        y.data_mut()[i] = (acc / count) as f32;
                    }
                }
            }
        }
        self.push(y, Op::AvgPoolBins { x, bins })
    }

    /// Broadcasts a `[C, bd, bh, bw]` cell map back to `shape`.
    pub fn bin_upsample(&mut self, x: NodeId, shape: [usize; 3]) -> NodeId {
        let xv = self.value(x);
        let [c, bd, bh, bw] = xv.shape();
        let [d, h, w] = shape;
        let mut y = Tensor::zeros([c, d, h, w]);
        for ch in 0..c {
            for z in 0..d {
                let sz = bin_of(z, bd, d);
                for yy in 0..h {
                    let sy = bin_of(yy, bh, h);
                    let row = y.index(ch, z, yy, 0);
                    for xx in 0..w {
                        y.data_mut()[row + xx] = xv.get(ch, sz, sy, bin_of(xx, bw, w));
                    }
                }
            }
        }
        self.push(y, Op::BinUpsample { x, bins: [bd, bh, bw] })
    }

    /// `F·Fᵀ / N` over the flattened spatial extent, as a `[C, C, 1, 1]` tensor.
    pub fn gram(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let c = xv.channels();
        let n = xv.plane_len();
        let mut g = Tensor::zeros([c, c, 1, 1]);
        conv::gemm(c, n, c, xv.data(), n, 1, xv.data(), 1, n, 0.0, g.data_mut(), c, 1);
        let inv = 1.0 / n as f32;
        g.data_mut().iter_mut().for_each(|v| *v *= inv);
        self.push(g, Op::Gram(x))
    }

    /// Mean squared difference to a constant target, as a scalar.
    pub fn mse_to(&mut self, x: NodeId, target: Tensor) -> NodeId {
        let xv = self.value(x);
        assert_eq!(xv.shape(), target.shape(), "mse_to: shapes differ");
        let s: f64 = xv
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum();
        let v = (s / xv.len() as f64) as f32;
        self.push(Tensor::scalar(v), Op::MseTo { x, target })
    }

    /// Combined BCE and Tversky loss on logits, as a scalar.
    pub fn seg_loss(&mut self, logits: NodeId, target: Tensor, cfg: LossConfig) -> NodeId {
        assert_eq!(self.shape(logits), target.shape(), "seg_loss: shapes differ");
        let v = seg_loss_value(self.value(logits).data(), target.data(), &cfg) as f32;
        self.push(Tensor::scalar(v), Op::SegLoss { logits, target, cfg })
    }

    /// Sum of scalars.
    pub fn sum_scalars(&mut self, xs: &[NodeId]) -> NodeId {
        let mut acc = xs[0];
        for &x in &xs[1..] {
            acc = self.add(acc, x);
        }
        acc
    }

    pub fn backward(&self, loss: NodeId) -> Grads {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.shape(loss), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            self.backprop(i, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        Grads { grads }
    }

    fn backprop(&self, i: usize, gy: &Tensor, grads: &mut [Option<Tensor>]) {
        let acc = |grads: &mut [Option<Tensor>], id: NodeId, g: Tensor| match &mut grads[id.0] {
            Some(t) => t.add_assign(&g),
            slot @ None => *slot = Some(g),
        };
        let y = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf | Op::Param(_) => {}
            Op::Conv { x, w, b, spec } => {
                let need_dx = self.requires_grad(*x);
                let (dx, dw, db) = conv::backward(self.value(*x), self.value(*w), spec, gy, need_dx);
                if let Some(dx) = dx {
                    acc(grads, *x, dx);
                }
                acc(grads, *w, dw);
                if let Some(b) = b {
                    acc(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                acc(grads, *a, gy.clone());
                acc(grads, *b, gy.clone());
            }
            Op::Scale(x, s) => {
                let mut g = gy.clone();
                g.data_mut().iter_mut().for_each(|v| *v *= s);
                acc(grads, *x, g);
            }
            Op::Relu(x) => {
                let mut g = gy.clone();
                for (gv, &yv) in g.data_mut().iter_mut().zip(y.data()) {
                    if yv <= 0.0 {
                        *gv = 0.0;
                    }
                }
                acc(grads, *x, g);
            }
            Op::Sigmoid(x) => {
                let mut g = gy.clone();
                for (gv, &yv) in g.data_mut().iter_mut().zip(y.data()) {
                    *gv *= yv * (1.0 - yv);
                }
                acc(grads, *x, g);
            }
            Op::MaxPool { x, argmax } => {
                let mut g = Tensor::zeros(self.shape(*x));
                for (&src, &gv) in argmax.iter().zip(gy.data()) {
                    g.data_mut()[src as usize] += gv;
                }
                acc(grads, *x, g);
            }
            Op::Upsample(x) => {
                let [c, d, h, w] = self.shape(*x);
                let mut g = Tensor::zeros([c, d, h, w]);
                let (src, dst) = (gy.data(), g.data_mut());
                for cd in 0..c * d {
                    for i in 0..2 * h {
                        for j in 0..2 * w {
                            dst[(cd * h + i / 2) * w + j / 2] += src[(cd * 2 * h + i) * 2 * w + j];
                        }
                    }
                }
                acc(grads, *x, g);
            }
            Op::Concat(xs) => {
                let mut off = 0;
                for &x in xs {
                    let s = self.shape(x);
                    let n: usize = s.iter().product();
                    let g = Tensor::new(s, gy.data()[off..off + n].to_vec()).expect("concat grad");
                    off += n;
                    acc(grads, x, g);
                }
            }
            Op::AvgPoolBins { x, bins } => {
                let [c, d, h, w] = self.shape(*x);
                let mut g = Tensor::zeros([c, d, h, w]);
                for ch in 0..c {
                    for bd in 0..bins[0] {
                        let (d0, d1) = bin_range(bd, bins[0], d);
                        for bh in 0..bins[1] {
                            let (h0, h1) = bin_range(bh, bins[1], h);
                            for bw in 0..bins[2] {
                                let (w0, w1) = bin_range(bw, bins[2], w);
                                let count = ((d1 - d0) * (h1 - h0) * (w1 - w0)) as f32;
                                let gv = gy.get(ch, bd, bh, bw) / count;
                                for z in d0..d1 {
                                    for yy in h0..h1 {
                                        let row = g.index(ch, z, yy, 0);
                                        g.data_mut()[row + w0..row + w1].iter_mut().for_each(|v| *v += gv);
                                    }
                                }
                            }
                        }
                    }
                }
                acc(grads, *x, g);
            }
            Op::BinUpsample { x, bins } => {
                let [c, d, h, w] = gy.shape();
                let mut g = Tensor::zeros([c, bins[0], bins[1], bins[2]]);
                for ch in 0..c {
                    for z in 0..d {
                        let sz = bin_of(z, bins[0], d);
                        for yy in 0..h {
                            let sy = bin_of(yy, bins[1], h);
                            for xx in 0..w {
                                let t = g.index(ch, sz, sy, bin_of(xx, bins[2], w));
                                g.data_mut()[t] += gy.get(ch, z, yy, xx);
                            }
                        }
                    }
                }
                acc(grads, *x, g);
            }
            Op::Gram(x) => {
                // dF = (dG + dGᵀ)·F / N
                let xv = self.value(*x);
                let c = xv.channels();
                let n = xv.plane_len();
                let mut sym = vec![0.0f32; c * c];
                for a in 0..c {
                    for b in 0..c {
                        sym[a * c + b] = (gy.data()[a * c + b] + gy.data()[b * c + a]) / n as f32;
                    }
                }
                let mut g = Tensor::zeros(xv.shape());
                conv::gemm(c, c, n, &sym, c, 1, xv.data(), n, 1, 0.0, g.data_mut(), n, 1);
                acc(grads, *x, g);
            }
            Op::MseTo { x, target } => {
                let xv = self.value(*x);
                let k = 2.0 * gy.item() / xv.len() as f32;
                let data = xv.data().iter().zip(target.data()).map(|(a, b)| k * (a - b)).collect();
                acc(grads, *x, Tensor::new(xv.shape(), data).expect("mse grad"));
            }
            Op::SegLoss { logits, target, cfg } => {
                let z = self.value(*logits);
                let mut g = seg_loss_grad(z.data(), target.data(), cfg);
                let s = gy.item();
                g.iter_mut().for_each(|v| *v *= s);
                acc(grads, *logits, Tensor::new(z.shape(), g).expect("loss grad"));
            }
        }
    }

    /// Whether any gradient can flow into `id` (leaf inputs are treated as constants
    /// unless they feed a parameter path, so conv skips their input gradient).
    fn requires_grad(&self, id: NodeId) -> bool {
        !matches!(self.nodes[id.0].op, Op::Leaf) || self.grad_inputs.contains(&id)
    }

    /// Marks a leaf as requiring a gradient through convolutions.
    pub fn input_with_grad(&mut self, t: Tensor) -> NodeId {
        let id = self.input(t);
        self.grad_inputs.push(id);
        id
    }

    /// Adds every parameter gradient on the tape into the store.
    pub fn accumulate_param_grads(&self, grads: &Grads, store: &mut ParamStore) {
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(pid), Some(g)) = (&node.op, &grads.grads[i]) {
                store.grad_mut(*pid).add_assign(g);
            }
        }
    }
}

#[inline]
pub fn sigmoid(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
