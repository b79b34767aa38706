//! Helical sliding-window augmentation.
//!
//! A polar pullback is one long sequence of A-lines. Cutting it into frames
//! at any offset other than the acquisition's own frame boundaries yields a
//! new, physically valid pullback: the catheter angle is continuous between
//! consecutive frames, so a window that straddles two frames is just a frame
//! that started its rotation at a different moment.

use crate::error::{Error, Result};
use crate::volume::{CoordSystem, LabelVolume, Plane, Volume};

/// All A-lines of a pullback as a `samples × total_alines` array, frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarFrameSeq<T> {
    pub samples_per_aline: usize,
    pub alines_per_frame: usize,
    /// Column `c` (A-line `c % alines_per_frame` of frame `c / alines_per_frame`)
    /// occupies `data[c * samples_per_aline..(c + 1) * samples_per_aline]`.
    pub data: Vec<T>,
}

impl<T: Copy> PolarFrameSeq<T> {
    pub fn total_alines(&self) -> usize {
        self.data.len() / self.samples_per_aline
    }

    pub fn frames(&self) -> usize {
        self.total_alines() / self.alines_per_frame
    }

    pub fn column(&self, c: usize) -> &[T] {
        &self.data[c * self.samples_per_aline..(c + 1) * self.samples_per_aline]
    }

    /// Largest valid window offset.
    pub fn max_offset(&self) -> usize {
        self.total_alines() - self.alines_per_frame
    }

    /// The frame-sized slice of A-lines starting at `offset`. There is no wraparound.
    pub fn window_frame(&self, offset: usize) -> Result<Plane<T>> {
        if offset > self.max_offset() {
            return Err(Error::OffsetOutOfRange {
                offset,
                min: 0,
                max: self.max_offset(),
            });
        }
        let s = self.samples_per_aline;
        let start = offset * s;
        let end = start + self.alines_per_frame * s;
        Ok(Plane::new(s, self.alines_per_frame, self.data[start..end].to_vec()))
    }

    /// Re-cuts the sequence into frames starting at `offset`, keeping every
    /// complete window: `(total - offset) / alines_per_frame` frames.
    pub fn rewindow(&self, offset: usize) -> Result<(Vec<T>, usize)> {
        if offset > self.max_offset() {
            return Err(Error::OffsetOutOfRange {
                offset,
                min: 0,
                max: self.max_offset(),
            });
        }
        let frames = (self.total_alines() - offset) / self.alines_per_frame;
        let s = self.samples_per_aline;
        let start = offset * s;
        let end = start + frames * self.alines_per_frame * s;
        Ok((self.data[start..end].to_vec(), frames))
    }
}

fn require_polar(coord: CoordSystem) -> Result<()> {
    if coord == CoordSystem::Polar {
        Ok(())
    } else {
        Err(Error::CoordSystem {
            expected: CoordSystem::Polar,
            actual: coord,
        })
    }
}

/// Concatenates every frame's A-lines in acquisition order. Because volumes
/// are stored sample-fastest, frame-slowest, this is the volume buffer itself.
pub fn concat_pullback(v: &Volume) -> Result<PolarFrameSeq<f32>> {
    require_polar(v.coord_system())?;
    let [s, a, _] = v.dims();
    Ok(PolarFrameSeq {
        samples_per_aline: s,
        alines_per_frame: a,
        data: v.data().to_vec(),
    })
}

pub fn concat_labels(l: &LabelVolume) -> Result<PolarFrameSeq<bool>> {
    require_polar(l.coord_system())?;
    let [s, a, _] = l.dims();
    Ok(PolarFrameSeq {
        samples_per_aline: s,
        alines_per_frame: a,
        data: l.mask().to_vec(),
    })
}

/// Inverse of [`concat_pullback`] for a sequence of whole frames.
pub fn seq_to_volume(seq: &PolarFrameSeq<f32>, like: &Volume) -> Result<Volume> {
    Volume::new(
        [seq.samples_per_aline, seq.alines_per_frame, seq.frames()],
        seq.data.clone(),
        like.spacing(),
        CoordSystem::Polar,
    )
}

/// Cuts frames starting at any offset in `0..=total - alines_per_frame`.
/// Offset 0 reproduces the source pullback.
pub fn window_volume(
    image: &Volume,
    labels: &[&LabelVolume],
    offset: usize,
) -> Result<(Volume, Vec<LabelVolume>)> {
    let seq = concat_pullback(image)?;
    let (data, frames) = seq.rewindow(offset)?;
    let dims = [seq.samples_per_aline, seq.alines_per_frame, frames];
    let out = Volume::new(dims, data, image.spacing(), CoordSystem::Polar)?;
    let mut out_labels = Vec::with_capacity(labels.len());
    for l in labels {
        l.ensure_same_shape(image.dims())?;
        let (mask, _) = concat_labels(l)?.rewindow(offset)?;
        out_labels.push(LabelVolume::new(dims, mask, l.target(), l.spacing(), CoordSystem::Polar)?);
    }
    Ok((out, out_labels))
}

/// The augmentation proper: a new `F - 1` frame pullback whose frame `k` is
/// the window at `offset + k·alines_per_frame`, for `0 < offset < alines_per_frame`.
/// Labels receive the identical index transform.
pub fn window_pullback(
    image: &Volume,
    labels: &[&LabelVolume],
    offset: usize,
) -> Result<(Volume, Vec<LabelVolume>)> {
    let w = image.dims()[1];
    if offset == 0 || offset >= w {
        return Err(Error::OffsetOutOfRange {
            offset,
            min: 1,
            max: w.saturating_sub(1),
        });
    }
    if image.frames() < 2 {
        return Err(Error::InvalidShape("window augmentation needs at least two frames".into()));
    }
    window_volume(image, labels, offset)
}
