//! Sliding depth-chunk inference over whole pullbacks.

use dcca_core::{LabelVolume, Target, Volume};

use crate::data::{chunk_starts, volume_chunk};
use crate::error::{Error, Result};
use crate::net::SegNet;
use crate::tensor::Tensor;

/// Mirror index into `0..n` for any integer, period `2(n - 1)`.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// `v` extended to `depth` frames by mirroring past the last frame.
fn reflect_pad(v: &Volume, depth: usize) -> Result<Tensor> {
    let [nx, ny, nz] = v.dims();
    let plane = nx * ny;
    let mut data = Vec::with_capacity(plane * depth);
    for z in 0..depth {
        let src = reflect(z as isize, nz);
        data.extend_from_slice(&v.data()[src * plane..(src + 1) * plane]);
    }
    Tensor::new([1, depth, ny, nx], data)
}

/// Probability volume from depth-`chunk` windows every `stride` frames, the
/// last aligned to the end. Voxels covered by several windows get the mean of
/// their predictions. A volume shorter than one chunk is reflect-padded and
/// the prediction cropped back.
pub fn infer_volume(net: &SegNet, v: &Volume, chunk: usize, stride: usize) -> Result<Volume> {
    if chunk == 0 || stride == 0 || stride > chunk {
        return Err(Error::Shape(format!("need 0 < stride <= chunk, got stride {stride}, chunk {chunk}")));
    }
    let [nx, ny, nz] = v.dims();
    let plane = nx * ny;
    if nz < chunk {
        let p = net.predict(reflect_pad(v, chunk)?)?;
        let data = p.data()[..nz * plane].to_vec();
        return Ok(Volume::new(v.dims(), data, v.spacing(), v.coord_system())?);
    }
    let mut sum = vec![0.0f64; nz * plane];
    let mut count = vec![0u32; nz];
    for z0 in chunk_starts(nz, chunk, stride) {
        let p = net.predict(volume_chunk(v, z0, chunk)?)?;
        for (acc, &x) in sum[z0 * plane..(z0 + chunk) * plane].iter_mut().zip(p.data()) {
            *acc += x as f64;
        }
        count[z0..z0 + chunk].iter_mut().for_each(|c| *c += 1);
    }
    let data = sum
        .iter()
        .enumerate()
        .map(|(i, &s)| (s / count[i / plane] as f64) as f32)
        .collect();
    Ok(Volume::new(v.dims(), data, v.spacing(), v.coord_system())?)
}

/// `prob ≥ tau`.
pub fn threshold(prob: &Volume, tau: f64, target: Target) -> Result<LabelVolume> {
    let mask = prob.data().iter().map(|&p| p as f64 >= tau).collect();
    Ok(LabelVolume::new(prob.dims(), mask, target, prob.spacing(), prob.coord_system())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use dcca_core::{CoordSystem, VoxelSpacing};

    #[test]
    fn reflection_indices() {
        let r: Vec<usize> = (0..9).map(|i| reflect(i, 3)).collect();
        assert_eq!(r, vec![0, 1, 2, 1, 0, 1, 2, 1, 0]);
        assert_eq!(reflect(5, 1), 0);
    }

    #[test]
    fn threshold_examples() {
        let sp = VoxelSpacing::default();
        let v = Volume::new([2, 1, 1], vec![0.4, 0.6], sp, CoordSystem::Cartesian).unwrap();
        assert_eq!(threshold(&v, 0.5, Target::Stent).unwrap().mask(), &[false, true]);
        let zeros = Volume::zeros([2, 2, 2], sp, CoordSystem::Cartesian).unwrap();
        assert_eq!(threshold(&zeros, 0.5, Target::Stent).unwrap().count(), 0);
        let ones = Volume::new([2, 2, 2], vec![1.0; 8], sp, CoordSystem::Cartesian).unwrap();
        assert_eq!(threshold(&ones, 0.5, Target::Stent).unwrap().count(), 8);
    }
}
