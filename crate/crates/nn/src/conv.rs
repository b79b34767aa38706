//! Same-padded, stride-1 dilated 3D convolution by per-slice im2col and sgemm.
//!
//! Weights are a `[C_out, C_in·kd·kh·kw]` matrix; column `k` packs
//! `((ci·kd + a)·kh + b)·kw + c`.

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    /// `[kd, kh, kw]`, each odd.
    pub kernel: [usize; 3],
    pub dilation: [usize; 3],
}

impl ConvSpec {
    pub fn pointwise() -> Self {
        ConvSpec {
            kernel: [1, 1, 1],
            dilation: [1, 1, 1],
        }
    }

    pub fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1]
    }
}

/// `c = a·b + beta·c` with explicit strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: usize,
    csa: usize,
    b: &[f32],
    rsb: usize,
    csb: usize,
    beta: f32,
    c: &mut [f32],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: bounds of the last element touched are checked below for each operand.
    assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!((m - 1) * rsc + (n - 1) * csc < c.len());
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Source offset of tap `t` (0-based) for kernel size `k` and dilation `dil`.
#[inline]
fn tap_offset(t: usize, k: usize, dil: usize) -> isize {
    (t as isize - (k / 2) as isize) * dil as isize
}

/// Column matrix `[C_in·taps, D·H·W]`; column `d·H·W + h·W + w` holds the
/// receptive field of output voxel `(d, h, w)`.
fn im2col(x: &Tensor, spec: &ConvSpec, cols: &mut Vec<f32>) {
    let [_, nd, nh, nw] = x.shape();
    let ld = nd * nh * nw;
    cols.clear();
    cols.resize(x.channels() * spec.taps() * ld, 0.0);
    for d in 0..nd {
        im2col_slice(x, spec, d, cols, ld);
    }
}

fn im2col_slice(x: &Tensor, spec: &ConvSpec, d: usize, cols: &mut [f32], ld: usize) {
    let [cin, nd, nh, nw] = x.shape();
    let [kd, kh, kw] = spec.kernel;
    let [dd, dh, dw] = spec.dilation;
    let hw = nh * nw;
    let xd = x.data();
    let mut row = 0;
    for ci in 0..cin {
        for a in 0..kd {
            let sd = d as isize + tap_offset(a, kd, dd);
            for b in 0..kh {
                let oh = tap_offset(b, kh, dh);
                for c in 0..kw {
                    let ow = tap_offset(c, kw, dw);
                    let dst = &mut cols[row * ld + d * hw..row * ld + (d + 1) * hw];
                    row += 1;
                    if sd < 0 || sd >= nd as isize {
                        continue;
                    }
                    let src_base = (ci * nd + sd as usize) * hw;
                    let (x0, x1) = valid_range(nw, ow);
                    if x0 >= x1 {
                        continue;
                    }
                    for y in 0..nh {
                        let sy = y as isize + oh;
                        if sy < 0 || sy >= nh as isize {
                            continue;
                        }
                        let s = src_base + sy as usize * nw;
                        let sx0 = (x0 as isize + ow) as usize;
                        dst[y * nw + x0..y * nw + x1].copy_from_slice(&xd[s + sx0..s + sx0 + (x1 - x0)]);
                    }
                }
            }
        }
    }
}

/// Output columns `x` in `0..n` whose source `x + off` lies inside `0..n`.
#[inline]
fn valid_range(n: usize, off: isize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (n as isize - off).clamp(0, n as isize) as usize;
    (lo.min(n), hi)
}

/// Scatters column gradients back onto `dx`; inverse layout of [`im2col`].
fn col2im(dcols: &[f32], spec: &ConvSpec, dx: &mut Tensor) {
    let [_, nd, nh, nw] = dx.shape();
    let ld = nd * nh * nw;
    for d in 0..nd {
        col2im_slice(dcols, spec, d, dx, ld);
    }
}

fn col2im_slice(dcols: &[f32], spec: &ConvSpec, d: usize, dx: &mut Tensor, ld: usize) {
    let [cin, nd, nh, nw] = dx.shape();
    let [kd, kh, kw] = spec.kernel;
    let [dd, dh, dw] = spec.dilation;
    let hw = nh * nw;
    let out = dx.data_mut();
    let mut row = 0;
    for ci in 0..cin {
        for a in 0..kd {
            let sd = d as isize + tap_offset(a, kd, dd);
            for b in 0..kh {
                let oh = tap_offset(b, kh, dh);
                for c in 0..kw {
                    let ow = tap_offset(c, kw, dw);
                    let src = &dcols[row * ld + d * hw..row * ld + (d + 1) * hw];
                    row += 1;
                    if sd < 0 || sd >= nd as isize {
                        continue;
                    }
                    let dst_base = (ci * nd + sd as usize) * hw;
                    let (x0, x1) = valid_range(nw, ow);
                    if x0 >= x1 {
                        continue;
                    }
                    for y in 0..nh {
                        let sy = y as isize + oh;
                        if sy < 0 || sy >= nh as isize {
                            continue;
                        }
                        let t = dst_base + sy as usize * nw + (x0 as isize + ow) as usize;
                        for (o, g) in out[t..t + (x1 - x0)].iter_mut().zip(&src[y * nw + x0..y * nw + x1]) {
                            *o += g;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn forward(x: &Tensor, w: &Tensor, b: Option<&Tensor>, spec: &ConvSpec) -> Tensor {
    let [cin, nd, nh, nw] = x.shape();
    let cout = w.shape()[0];
    let k = cin * spec.taps();
    assert_eq!(w.shape()[1], k, "weight columns do not match input channels");
    let n = nd * nh * nw;
    let mut y = Tensor::zeros([cout, nd, nh, nw]);
    let mut cols = Vec::new();
    let src: &[f32] = if spec.is_pointwise() {
        x.data()
    } else {
        im2col(x, spec, &mut cols);
        &cols
    };
    gemm(cout, k, n, w.data(), k, 1, src, n, 1, 0.0, y.data_mut(), n, 1);
    if let Some(b) = b {
        for (co, chunk) in y.data_mut().chunks_mut(n).enumerate() {
            let bv = b.data()[co];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
    }
    y
}

/// Gradients `(dx, dw, db)` given the output gradient `gy`.
pub(crate) fn backward(
    x: &Tensor,
    w: &Tensor,
    spec: &ConvSpec,
    gy: &Tensor,
    need_dx: bool,
) -> (Option<Tensor>, Tensor, Tensor) {
    let [cin, nd, nh, nw] = x.shape();
    let cout = w.shape()[0];
    let k = cin * spec.taps();
    let n = nd * nh * nw;
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros([cout, 1, 1, 1]);
    for (co, chunk) in gy.data().chunks(n).enumerate() {
        db.data_mut()[co] = chunk.iter().map(|&v| v as f64).sum::<f64>() as f32;
    }
    let mut cols = Vec::new();
    let src: &[f32] = if spec.is_pointwise() {
        x.data()
    } else {
        im2col(x, spec, &mut cols);
        &cols
    };
    gemm(cout, n, k, gy.data(), n, 1, src, 1, n, 0.0, dw.data_mut(), k, 1);
    let dx = need_dx.then(|| {
        let mut dx = Tensor::zeros(x.shape());
        if spec.is_pointwise() {
            gemm(k, cout, n, w.data(), 1, k, gy.data(), n, 1, 0.0, dx.data_mut(), n, 1);
        } else {
            let mut dcols = cols;
            gemm(k, cout, n, w.data(), 1, k, gy.data(), n, 1, 0.0, &mut dcols, n, 1);
            col2im(&dcols, spec, &mut dx);
        }
        dx
    });
    (dx, dw, db)
}
