//! Depth chunks of Cartesian volumes as network tensors.
//!
//! A volume stored x-fastest, frame-slowest maps onto a `[1, D, H, W]` tensor
//! with `W = x`, `H = y`, `D = frame` without reordering.

use dcca_core::{CoordSystem, LabelVolume, Volume};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One training example: image chunk and its binary target.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub mask: Tensor,
}

/// Start frames of depth-`depth` chunks spaced by `stride`; the last chunk is
/// aligned to the end so every frame is covered. Volumes shorter than one
/// chunk yield a single start at 0.
pub fn chunk_starts(frames: usize, depth: usize, stride: usize) -> Vec<usize> {
    assert!(depth > 0 && stride > 0, "chunk depth and stride must be positive");
    if frames <= depth {
        return vec![0];
    }
    let mut starts: Vec<usize> = (0..=frames - depth).step_by(stride).collect();
    if *starts.last().expect("non-empty") + depth < frames {
        starts.push(frames - depth);
    }
    starts
}

fn frame_range<T: Copy>(data: &[T], frame_len: usize, z0: usize, depth: usize) -> &[T] {
    &data[z0 * frame_len..(z0 + depth) * frame_len]
}

/// Frames `z0..z0 + depth` of `v` as a `[1, depth, ny, nx]` tensor.
pub fn volume_chunk(v: &Volume, z0: usize, depth: usize) -> Result<Tensor> {
    let [nx, ny, nz] = v.dims();
    if z0 + depth > nz {
        return Err(Error::Shape(format!("frames {z0}..{} outside a {nz}-frame volume", z0 + depth)));
    }
    Tensor::new([1, depth, ny, nx], frame_range(v.data(), nx * ny, z0, depth).to_vec())
}

/// Frames `z0..z0 + depth` of `l` as a 0/1 `[1, depth, ny, nx]` tensor.
pub fn mask_chunk(l: &LabelVolume, z0: usize, depth: usize) -> Result<Tensor> {
    let [nx, ny, nz] = l.dims();
    if z0 + depth > nz {
        return Err(Error::Shape(format!("frames {z0}..{} outside a {nz}-frame volume", z0 + depth)));
    }
    let data = frame_range(l.mask(), nx * ny, z0, depth)
        .iter()
        .map(|&m| if m { 1.0 } else { 0.0 })
        .collect();
    Tensor::new([1, depth, ny, nx], data)
}

/// Cuts a Cartesian image and its target into non-overlapping depth chunks
/// (the last one aligned to the end). Volumes shorter than `depth` are
/// rejected: training chunks are never padded.
pub fn chunk_pair(image: &Volume, target: &LabelVolume, depth: usize) -> Result<Vec<Sample>> {
    if image.coord_system() != CoordSystem::Cartesian {
        return Err(Error::Core(dcca_core::Error::CoordSystem {
            expected: CoordSystem::Cartesian,
            actual: image.coord_system(),
        }));
    }
    target.ensure_same_shape(image.dims())?;
    if depth == 0 || image.frames() < depth {
        return Err(Error::Shape(format!(
            "a {}-frame volume cannot supply depth-{depth} chunks",
            image.frames()
        )));
    }
    chunk_starts(image.frames(), depth, depth)
        .into_iter()
        .map(|z0| {
            Ok(Sample {
                image: volume_chunk(image, z0, depth)?,
                mask: mask_chunk(target, z0, depth)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use dcca_core::{Target, VoxelSpacing};

    #[test]
    fn starts_cover_every_frame() {
        assert_eq!(chunk_starts(32, 32, 32), vec![0]);
        assert_eq!(chunk_starts(20, 32, 16), vec![0]);
        assert_eq!(chunk_starts(64, 32, 32), vec![0, 32]);
        assert_eq!(chunk_starts(70, 32, 32), vec![0, 32, 38]);
        assert_eq!(chunk_starts(40, 8, 16), vec![0, 16, 32]);
        assert_eq!(chunk_starts(41, 8, 16), vec![0, 16, 32, 33]);
    }

    #[test]
    fn chunks_keep_the_voxel_layout() {
        let dims = [4, 3, 5];
        let data: Vec<f32> = (0..60).map(|i| i as f32 / 60.0).collect();
        let v = Volume::new(dims, data, VoxelSpacing::default(), CoordSystem::Cartesian).unwrap();
        let mask: Vec<bool> = (0..60).map(|i| i % 7 == 0).collect();
        let l = LabelVolume::new(dims, mask, Target::Stent, VoxelSpacing::default(), CoordSystem::Cartesian).unwrap();
        let s = chunk_pair(&v, &l, 2).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[2].image.shape(), [1, 2, 3, 4]);
        // last chunk is frames 3..5
        assert_eq!(s[2].image.get(0, 1, 2, 3), v.get(3, 2, 4));
        assert_eq!(s[0].mask.get(0, 0, 0, 0), 1.0);
        assert_eq!(s[0].mask.get(0, 0, 1, 3), 1.0);
        assert!(chunk_pair(&v, &l, 6).is_err());
    }
}
