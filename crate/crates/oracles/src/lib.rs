//! Slow, obviously-correct reference implementations. Test-only: nothing in
//! the shipped crates depends on this.
//!
//! All functions take raw `x`-fastest buffers plus dimensions so they share
//! no code path with the implementations they check.

/// Per-frame 8-connected components by recursive-style depth-first fill.
/// Returns a label per voxel (`0` = background, components numbered from 1
/// in raster order of their first voxel).
pub fn flood_fill_labels(mask: &[bool], dims: [usize; 3]) -> Vec<u32> {
    let [nx, ny, nz] = dims;
    let mut label = vec![0u32; mask.len()];
    let mut next = 0u32;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = x + nx * (y + ny * z);
                if !mask[i] || label[i] != 0 {
                    continue;
                }
                next += 1;
                let mut stack = vec![(x, y)];
                label[i] = next;
                while let Some((cx, cy)) = stack.pop() {
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let (qx, qy) = (cx as i64 + dx, cy as i64 + dy);
                            if qx < 0 || qy < 0 || qx >= nx as i64 || qy >= ny as i64 {
                                continue;
                            }
                            let j = qx as usize + nx * (qy as usize + ny * z);
                            if mask[j] && label[j] == 0 {
                                label[j] = next;
                                stack.push((qx as usize, qy as usize));
                            }
                        }
                    }
                }
            }
        }
    }
    label
}

/// Maximum number of one-to-one pairs with distance `<= radius`, by
/// exhaustive search over assignments. Points are `(frame, x, y)`.
/// Exponential; only for a handful of points.
pub fn optimal_match_count(pred: &[(usize, f64, f64)], gt: &[(usize, f64, f64)], radius: f64) -> usize {
    fn go(i: usize, pred: &[(usize, f64, f64)], gt: &[(usize, f64, f64)], used: &mut Vec<bool>, r: f64) -> usize {
        if i == pred.len() {
            return 0;
        }
        let mut best = go(i + 1, pred, gt, used, r);
        for j in 0..gt.len() {
            let (pf, px, py) = pred[i];
            let (gf, gx, gy) = gt[j];
            if used[j] || pf != gf || ((px - gx).powi(2) + (py - gy).powi(2)).sqrt() > r {
                continue;
            }
            used[j] = true;
            best = best.max(1 + go(i + 1, pred, gt, used, r));
            used[j] = false;
        }
        best
    }
    go(0, pred, gt, &mut vec![false; gt.len()], radius)
}

/// Lumen voxels with a 6-neighbour (inside the volume) that is not lumen.
pub fn boundary_scan(mask: &[bool], dims: [usize; 3]) -> Vec<bool> {
    let [nx, ny, nz] = dims;
    let at = |x: i64, y: i64, z: i64| -> Option<bool> {
        if x < 0 || y < 0 || z < 0 || x >= nx as i64 || y >= ny as i64 || z >= nz as i64 {
            None
        } else {
            Some(mask[x as usize + nx * (y as usize + ny * z as usize)])
        }
    };
    let mut out = vec![false; mask.len()];
    for z in 0..nz as i64 {
        for y in 0..ny as i64 {
            for x in 0..nx as i64 {
                if at(x, y, z) != Some(true) {
                    continue;
                }
                let nbrs = [
                    at(x - 1, y, z),
                    at(x + 1, y, z),
                    at(x, y - 1, z),
                    at(x, y + 1, z),
                    at(x, y, z - 1),
                    at(x, y, z + 1),
                ];
                out[x as usize + nx * (y as usize + ny * z as usize)] = nbrs.contains(&Some(false));
            }
        }
    }
    out
}

/// Signed distance (mm) from every voxel to its nearest boundary voxel by
/// scanning all boundary voxels. `spacing_mm` is `[dx, dy, dz]`; squared
/// terms are summed x, then y, then z. Positive inside the mask.
pub fn all_pairs_signed_distance(mask: &[bool], dims: [usize; 3], spacing_mm: [f64; 3]) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    let boundary = boundary_scan(mask, dims);
    let sites: Vec<[usize; 3]> = (0..mask.len())
        .filter(|&i| boundary[i])
        .map(|i| [i % nx, (i / nx) % ny, i / (nx * ny)])
        .collect();
    let mut out = vec![0.0; mask.len()];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let mut best = f64::INFINITY;
                for s in &sites {
                    let ax = spacing_mm[0] * (x as f64 - s[0] as f64).abs();
                    let ay = spacing_mm[1] * (y as f64 - s[1] as f64).abs();
                    let az = spacing_mm[2] * (z as f64 - s[2] as f64).abs();
                    let d2 = ax * ax + ay * ay + az * az;
                    if d2 < best {
                        best = d2;
                    }
                }
                let i = x + nx * (y + ny * z);
                let d = best.sqrt();
                out[i] = if mask[i] { d } else { -d };
            }
        }
    }
    out
}

/// Point-to-set distance from `p` to the nearest of `sites`, all in the same units.
pub fn nearest_site_distance(p: [f64; 3], sites: &[[f64; 3]]) -> f64 {
    sites
        .iter()
        .map(|s| ((p[0] - s[0]).powi(2) + (p[1] - s[1]).powi(2) + (p[2] - s[2]).powi(2)).sqrt())
        .fold(f64::INFINITY, f64::min)
}

/// Tiny deterministic generator so oracle-driven tests need no RNG crate.
#[derive(Debug, Clone)]
pub struct SplitMix64(pub u64);

impl SplitMix64 {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }
}
