//! Lumen boundary extraction and the exact signed anisotropic distance transform.

use crate::error::{Error, Result};
use crate::volume::{linear_index, Dims, LabelVolume, VoxelSpacing};

/// Signed distance (mm) from every voxel centre to the nearest lumen boundary
/// voxel centre: positive inside the lumen, negative outside.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    dims: Dims,
    spacing: VoxelSpacing,
    values_mm: Vec<f64>,
}

impl DistanceField {
    pub fn dims(&self) -> Dims {
        self.dims
    }
    pub fn spacing(&self) -> VoxelSpacing {
        self.spacing
    }
    pub fn values_mm(&self) -> &[f64] {
        &self.values_mm
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.values_mm[linear_index(self.dims, x, y, z)]
    }

    /// Bilinear in-plane lookup at a physical position `(x_um, y_um)` in `frame`.
    pub fn sample_in_frame(&self, frame: usize, x_um: f64, y_um: f64) -> f64 {
        let [nx, ny, _] = self.dims;
        let fx = (x_um / self.spacing.dx_um).clamp(0.0, (nx - 1) as f64);
        let fy = (y_um / self.spacing.dy_um).clamp(0.0, (ny - 1) as f64);
        let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(nx - 1), (y0 + 1).min(ny - 1));
        let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
        let v0 = self.get(x0, y0, frame) * (1.0 - tx) + self.get(x1, y0, frame) * tx;
        let v1 = self.get(x0, y1, frame) * (1.0 - tx) + self.get(x1, y1, frame) * tx;
        v0 * (1.0 - ty) + v1 * ty
    }
}

const NEIGHBORS_6: [[isize; 3]; 6] = [
    [-1, 0, 0],
    [1, 0, 0],
    [0, -1, 0],
    [0, 1, 0],
    [0, 0, -1],
    [0, 0, 1],
];

/// Lumen voxels with at least one 6-neighbour outside the mask. Neighbours
/// beyond the volume edge do not count: the vessel continues past the first
/// and last frame.
pub fn lumen_boundary(lumen: &LabelVolume) -> Result<Vec<bool>> {
    let dims = lumen.dims();
    let mask = lumen.mask();
    if !mask.iter().any(|&m| m) {
        return Err(Error::EmptyMask);
    }
    let [nx, ny, nz] = dims;
    let mut out = vec![false; mask.len()];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = linear_index(dims, x, y, z);
                if !mask[i] {
                    continue;
                }
                out[i] = NEIGHBORS_6.iter().any(|o| {
                    let q = [x as isize + o[0], y as isize + o[1], z as isize + o[2]];
                    let inside = q.iter().zip(&dims).all(|(&c, &n)| c >= 0 && (c as usize) < n);
                    inside && !mask[linear_index(dims, q[0] as usize, q[1] as usize, q[2] as usize)]
                });
            }
        }
    }
    Ok(out)
}

/// Exact squared-distance lower envelope along one line (Felzenszwalb &
/// Huttenlocher) with sample pitch `w`. `f` holds squared distances, `INFINITY`
/// where no site exists; it is overwritten with
/// `min_p f[p] + (w·|q - p|)²`.
fn envelope_1d(f: &mut [f64], w: f64, v: &mut Vec<usize>, z: &mut Vec<f64>) {
    let n = f.len();
    v.clear();
    z.clear();
    let w2 = w * w;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        let qf = q as f64;
        loop {
            let Some(&p) = v.last() else {
                v.push(q);
                z.push(f64::NEG_INFINITY);
                break;
            };
            let pf = p as f64;
            let s = ((f[q] + w2 * qf * qf) - (f[p] + w2 * pf * pf)) / (2.0 * w2 * (qf - pf));
            if s <= *z.last().unwrap() {
                v.pop();
                z.pop();
            } else {
                v.push(q);
                z.push(s);
                break;
            }
        }
    }
    if v.is_empty() {
        return;
    }
    let src: Vec<f64> = v.iter().map(|&p| f[p]).collect();
    let eval = |k: usize, q: usize| {
        let d = w * (q as f64 - v[k] as f64).abs();
        src[k] + d * d
    };
    let mut k = 0;
    for q in 0..n {
        while k + 1 < v.len() && z[k + 1] < q as f64 {
            k += 1;
        }
        // neighbours on the envelope guard against rounding in the breakpoints
        let mut best = eval(k, q);
        if k > 0 {
            best = best.min(eval(k - 1, q));
        }
        if k + 1 < v.len() {
            best = best.min(eval(k + 1, q));
        }
        f[q] = best;
    }
}

/// Signed exact Euclidean distance transform to the lumen boundary under the
/// volume's physical spacing. Passes run x, then y, then z, so squared
/// distances accumulate as `((dx·i)² + (dy·j)²) + (dz·k)²`.
pub fn distance_field(lumen: &LabelVolume) -> Result<DistanceField> {
    let boundary = lumen_boundary(lumen)?;
    if !boundary.iter().any(|&b| b) {
        return Err(Error::NoBoundary);
    }
    let dims = lumen.dims();
    let [nx, ny, nz] = dims;
    let [wx, wy, wz] = lumen.spacing().mm();
    let mut sq: Vec<f64> = boundary
        .iter()
        .map(|&b| if b { 0.0 } else { f64::INFINITY })
        .collect();
    let (mut v, mut zb) = (Vec::new(), Vec::new());
    let mut line = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            let start = linear_index(dims, 0, y, z);
            envelope_1d(&mut sq[start..start + nx], wx, &mut v, &mut zb);
        }
    }
    for z in 0..nz {
        for x in 0..nx {
            line.clear();
            line.extend((0..ny).map(|y| sq[linear_index(dims, x, y, z)]));
            envelope_1d(&mut line, wy, &mut v, &mut zb);
            for (y, &val) in line.iter().enumerate() {
                sq[linear_index(dims, x, y, z)] = val;
            }
        }
    }
    for y in 0..ny {
        for x in 0..nx {
            line.clear();
            line.extend((0..nz).map(|z| sq[linear_index(dims, x, y, z)]));
            envelope_1d(&mut line, wz, &mut v, &mut zb);
            for (z, &val) in line.iter().enumerate() {
                sq[linear_index(dims, x, y, z)] = val;
            }
        }
    }
    let mask = lumen.mask();
    let values_mm = sq
        .iter()
        .zip(mask)
        .map(|(&d2, &inside)| {
            let d = d2.sqrt();
            if inside {
                d
            } else {
                -d
            }
        })
        .collect();
    Ok(DistanceField {
        dims,
        spacing: lumen.spacing(),
        values_mm,
    })
}
