//! Strut-level centroid matching and voxel-level overlap metrics.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::volume::{linear_index, LabelVolume};

/// Default matching radius between predicted and ground-truth centroids.
pub const MATCH_RADIUS_UM: f64 = 50.0;

/// One 8-connected strut cross-section.
#[derive(Debug, Clone, PartialEq)]
pub struct StrutInstance {
    pub frame: usize,
    /// In-frame centroid `(x, y)` in μm, voxel centres at `index · spacing`.
    pub centroid_um: [f64; 2],
    pub voxel_count: usize,
    /// Member voxels as `(x, y)` within `frame`.
    pub voxels: Vec<[usize; 2]>,
}

impl StrutInstance {
    pub fn distance_um(&self, other: &StrutInstance) -> f64 {
        let dx = self.centroid_um[0] - other.centroid_um[0];
        let dy = self.centroid_um[1] - other.centroid_um[1];
        dx.hypot(dy)
    }

    /// Inclusive bounding box `[x0, y0, x1, y1]`.
    pub fn bbox(&self) -> [usize; 4] {
        let mut b = [usize::MAX, usize::MAX, 0, 0];
        for &[x, y] in &self.voxels {
            b[0] = b[0].min(x);
            b[1] = b[1].min(y);
            b[2] = b[2].max(x);
            b[3] = b[3].max(y);
        }
        b
    }
}

const NEIGHBORS_8: [(isize, isize); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

/// Per-frame 8-connected components of a strut mask, in raster order of
/// their first voxel.
pub fn extract_struts(mask: &LabelVolume) -> Vec<StrutInstance> {
    let dims = mask.dims();
    let [nx, ny, nz] = dims;
    let sp = mask.spacing();
    let mut seen = vec![false; nx * ny];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for z in 0..nz {
        seen.iter_mut().for_each(|s| *s = false);
        for y in 0..ny {
            for x in 0..nx {
                if seen[x + nx * y] || !mask.mask()[linear_index(dims, x, y, z)] {
                    continue;
                }
                seen[x + nx * y] = true;
                queue.push_back([x, y]);
                let mut voxels = Vec::new();
                while let Some([cx, cy]) = queue.pop_front() {
                    voxels.push([cx, cy]);
                    for (ox, oy) in NEIGHBORS_8 {
                        let (qx, qy) = (cx as isize + ox, cy as isize + oy);
                        if qx < 0 || qy < 0 || qx >= nx as isize || qy >= ny as isize {
                            continue;
                        }
                        let (qx, qy) = (qx as usize, qy as usize);
                        if !seen[qx + nx * qy] && mask.mask()[linear_index(dims, qx, qy, z)] {
                            seen[qx + nx * qy] = true;
                            queue.push_back([qx, qy]);
                        }
                    }
                }
                let n = voxels.len() as f64;
                let (sx, sy) = voxels
                    .iter()
                    .fold((0.0, 0.0), |(sx, sy), &[x, y]| (sx + x as f64, sy + y as f64));
                out.push(StrutInstance {
                    frame: z,
                    centroid_um: [sx / n * sp.dx_um, sy / n * sp.dy_um],
                    voxel_count: voxels.len(),
                    voxels,
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub pred: usize,
    pub gt: usize,
    pub distance_um: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub pairs: Vec<MatchedPair>,
}

impl MatchCounts {
    /// Adds another volume's counts; pair indices stay local to their volume.
    pub fn accumulate(&mut self, other: &MatchCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

/// One-to-one greedy matching within each frame: candidate pairs closer than
/// `radius_um` are taken in order of (distance, pred index, gt index).
pub fn match_struts(pred: &[StrutInstance], gt: &[StrutInstance], radius_um: f64) -> MatchCounts {
    let mut candidates = Vec::new();
    for (pi, p) in pred.iter().enumerate() {
        for (gi, g) in gt.iter().enumerate() {
            if p.frame != g.frame {
                continue;
            }
            let d = p.distance_um(g);
            if d <= radius_um {
                candidates.push(MatchedPair {
                    pred: pi,
                    gt: gi,
                    distance_um: d,
                });
            }
        }
    }
    candidates.sort_by(|a, b| {
        a.distance_um
            .total_cmp(&b.distance_um)
            .then(a.pred.cmp(&b.pred))
            .then(a.gt.cmp(&b.gt))
    });
    let mut pred_used = vec![false; pred.len()];
    let mut gt_used = vec![false; gt.len()];
    let mut pairs = Vec::new();
    for c in candidates {
        if !pred_used[c.pred] && !gt_used[c.gt] {
            pred_used[c.pred] = true;
            gt_used[c.gt] = true;
            pairs.push(c);
        }
    }
    MatchCounts {
        tp: pairs.len(),
        fp: pred.len() - pairs.len(),
        fn_: gt.len() - pairs.len(),
        pairs,
    }
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}

/// Instance-count scores. Each is `None` when its denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrutScores {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub dice: Option<f64>,
    pub iou: Option<f64>,
}

pub fn strut_metrics(c: &MatchCounts) -> StrutScores {
    let (tp, fp, fn_) = (c.tp as f64, c.fp as f64, c.fn_ as f64);
    StrutScores {
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        dice: ratio(2.0 * tp, 2.0 * tp + fp + fn_),
        iou: ratio(tp, tp + fn_ + fp),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelScores {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub dice: Option<f64>,
    pub iou: Option<f64>,
}

pub fn overlap_counts(pred: &LabelVolume, gt: &LabelVolume) -> Result<OverlapCounts> {
    pred.ensure_same_shape(gt.dims())?;
    let mut c = OverlapCounts { tp: 0, fp: 0, fn_: 0 };
    for (&p, &g) in pred.mask().iter().zip(gt.mask()) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(c)
}

pub fn voxel_scores(c: OverlapCounts) -> VoxelScores {
    let (tp, fp, fn_) = (c.tp as f64, c.fp as f64, c.fn_ as f64);
    VoxelScores {
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        dice: ratio(2.0 * tp, 2.0 * tp + fp + fn_),
        iou: ratio(tp, tp + fp + fn_),
    }
}

pub fn voxel_metrics(pred: &LabelVolume, gt: &LabelVolume) -> Result<VoxelScores> {
    Ok(voxel_scores(overlap_counts(pred, gt)?))
}

/// Mean and sample standard deviation over the values that are present.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

pub fn mean_std(values: impl IntoIterator<Item = Option<f64>>) -> Option<MeanStd> {
    let v: Vec<f64> = values.into_iter().flatten().collect();
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some(MeanStd {
        mean,
        std,
        n: v.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{CoordSystem, Target, VoxelSpacing};

    fn strut(frame: usize, x: f64, y: f64) -> StrutInstance {
        StrutInstance {
            frame,
            centroid_um: [x, y],
            voxel_count: 1,
            voxels: vec![[0, 0]],
        }
    }

    fn mask_from(nx: usize, ny: usize, on: &[(usize, usize)]) -> LabelVolume {
        let mut m = vec![false; nx * ny];
        for &(x, y) in on {
            m[x + nx * y] = true;
        }
        let sp = VoxelSpacing::new(10.0, 10.0, 200.0).unwrap();
        LabelVolume::new([nx, ny, 1], m, Target::Stent, sp, CoordSystem::Cartesian).unwrap()
    }

    #[test]
    fn square_centroid_is_its_center() {
        let on: Vec<_> = (2..5).flat_map(|x| (3..6).map(move |y| (x, y))).collect();
        let s = extract_struts(&mask_from(8, 8, &on));
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].voxel_count, 9);
        assert_eq!(s[0].centroid_um, [30.0, 40.0]);
    }

    #[test]
    fn diagonal_squares_are_one_component() {
        let mut on: Vec<_> = (0..2).flat_map(|x| (0..2).map(move |y| (x, y))).collect();
        on.extend((2..4).flat_map(|x| (2..4).map(move |y| (x, y))));
        assert_eq!(extract_struts(&mask_from(6, 6, &on)).len(), 1);
    }

    #[test]
    fn empty_mask_has_no_struts() {
        assert!(extract_struts(&mask_from(4, 4, &[])).is_empty());
    }

    #[test]
    fn radius_rule() {
        let c = match_struts(&[strut(0, 0.0, 0.0)], &[strut(0, 0.0, 40.0)], MATCH_RADIUS_UM);
        assert_eq!((c.tp, c.fp, c.fn_), (1, 0, 0));
        let c = match_struts(&[strut(0, 0.0, 60.0)], &[strut(0, 0.0, 0.0)], MATCH_RADIUS_UM);
        assert_eq!((c.tp, c.fp, c.fn_), (0, 1, 1));
        let c = match_struts(
            &[strut(0, 0.0, 10.0), strut(0, 0.0, -20.0)],
            &[strut(0, 0.0, 0.0)],
            MATCH_RADIUS_UM,
        );
        assert_eq!((c.tp, c.fp, c.fn_), (1, 1, 0));
        assert_eq!(c.pairs[0].pred, 0);
    }

    #[test]
    fn frames_never_match_across() {
        let c = match_struts(&[strut(1, 0.0, 0.0)], &[strut(0, 0.0, 0.0)], MATCH_RADIUS_UM);
        assert_eq!((c.tp, c.fp, c.fn_), (0, 1, 1));
    }

    #[test]
    fn count_formulas() {
        let s = strut_metrics(&MatchCounts { tp: 8, fp: 2, fn_: 0, pairs: vec![] });
        assert_eq!(s.precision, Some(0.8));
        assert!((s.dice.unwrap() - 16.0 / 18.0).abs() < 1e-15);
        assert_eq!(s.iou, Some(0.8));
        let s = strut_metrics(&MatchCounts { tp: 5, fp: 0, fn_: 0, pairs: vec![] });
        assert_eq!((s.precision, s.dice, s.iou), (Some(1.0), Some(1.0), Some(1.0)));
        let s = strut_metrics(&MatchCounts::default());
        assert_eq!((s.precision, s.recall, s.dice, s.iou), (None, None, None, None));
    }

    #[test]
    fn voxel_metric_extremes() {
        let a = mask_from(4, 4, &[(0, 0), (1, 1)]);
        let b = mask_from(4, 4, &[(2, 2)]);
        let same = voxel_metrics(&a, &a).unwrap();
        assert_eq!((same.precision, same.recall, same.dice, same.iou), (Some(1.0), Some(1.0), Some(1.0), Some(1.0)));
        let d = voxel_metrics(&a, &b).unwrap();
        assert_eq!((d.precision, d.recall, d.dice, d.iou), (Some(0.0), Some(0.0), Some(0.0), Some(0.0)));
        let other = LabelVolume::empty([3, 4, 1], Target::Stent, a.spacing(), CoordSystem::Cartesian).unwrap();
        assert!(voxel_metrics(&a, &other).is_err());
    }

    #[test]
    fn mean_std_skips_missing() {
        let m = mean_std([Some(1.0), None, Some(3.0)]).unwrap();
        assert_eq!((m.mean, m.n), (2.0, 2));
        assert!((m.std - 2f64.sqrt()).abs() < 1e-12);
        assert!(mean_std([None]).is_none());
    }
}
