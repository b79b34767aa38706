//! Image and label volumes with physical voxel spacing.
//!
//! All 3D arrays are stored flat with `x` fastest and the frame axis slowest,
//! i.e. linear index `x + nx * (y + ny * z)`. For polar volumes `x` is the
//! radial sample along an A-line and `y` is the A-line index within a frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clinical in-plane pitch: a 7 mm field of view over 512 pixels.
pub const CLINICAL_INPLANE_UM: f64 = 7000.0 / 512.0;
/// Clinical frame pitch: 75 mm of pullback over 375 frames.
pub const CLINICAL_FRAME_PITCH_UM: f64 = 75_000.0 / 375.0;
pub const DEFAULT_ALINES_PER_FRAME: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelSpacing {
    pub dx_um: f64,
    pub dy_um: f64,
    pub dz_um: f64,
}

impl Default for VoxelSpacing {
    fn default() -> Self {
        VoxelSpacing {
            dx_um: CLINICAL_INPLANE_UM,
            dy_um: CLINICAL_INPLANE_UM,
            dz_um: CLINICAL_FRAME_PITCH_UM,
        }
    }
}

impl VoxelSpacing {
    pub fn new(dx_um: f64, dy_um: f64, dz_um: f64) -> Result<Self> {
        let s = VoxelSpacing { dx_um, dy_um, dz_um };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.as_array();
        if v.iter().all(|s| s.is_finite() && *s > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidSpacing(v))
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.dx_um, self.dy_um, self.dz_um]
    }

    /// Spacing in millimetres, x/y/z.
    pub fn mm(&self) -> [f64; 3] {
        [self.dx_um / 1000.0, self.dy_um / 1000.0, self.dz_um / 1000.0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordSystem {
    Cartesian,
    Polar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Stent,
    Lumen,
}

impl Target {
    pub fn as_str(&self) -> &'static str {
        match self {
            Target::Stent => "stent",
            Target::Lumen => "lumen",
        }
    }
}

/// Volume dimensions `[nx, ny, nz]`.
pub type Dims = [usize; 3];

#[inline]
pub fn linear_index(dims: Dims, x: usize, y: usize, z: usize) -> usize {
    x + dims[0] * (y + dims[1] * z)
}

fn check_dims(dims: Dims, len: usize) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::InvalidShape(format!("zero-sized dimension in {dims:?}")));
    }
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::InvalidShape(format!("{dims:?} overflows")))?;
    if n != len {
        return Err(Error::InvalidShape(format!(
            "{dims:?} needs {n} voxels, data has {len}"
        )));
    }
    Ok(())
}

/// A normalized scalar volume. Values are finite and lie in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: Dims,
    data: Vec<f32>,
    spacing: VoxelSpacing,
    coord: CoordSystem,
}

impl Volume {
    pub fn new(dims: Dims, data: Vec<f32>, spacing: VoxelSpacing, coord: CoordSystem) -> Result<Self> {
        check_dims(dims, data.len())?;
        spacing.validate()?;
        for (i, &v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(i));
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::OutOfRange { index: i, value: v });
            }
        }
        Ok(Volume {
            dims,
            data,
            spacing,
            coord,
        })
    }

    /// Min-max rescales arbitrary finite intensities into `[0, 1]`.
    /// A constant input maps to all zeros.
    pub fn normalized(dims: Dims, mut data: Vec<f32>, spacing: VoxelSpacing, coord: CoordSystem) -> Result<Self> {
        check_dims(dims, data.len())?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        let (lo, hi) = data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let range = hi - lo;
        for v in &mut data {
            *v = if range > 0.0 { ((*v - lo) / range).clamp(0.0, 1.0) } else { 0.0 };
        }
        Volume::new(dims, data, spacing, coord)
    }

    pub fn zeros(dims: Dims, spacing: VoxelSpacing, coord: CoordSystem) -> Result<Self> {
        let n = dims.iter().product();
        Volume::new(dims, vec![0.0; n], spacing, coord)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
    pub fn spacing(&self) -> VoxelSpacing {
        self.spacing
    }
    pub fn coord_system(&self) -> CoordSystem {
        self.coord
    }
    pub fn frames(&self) -> usize {
        self.dims[2]
    }
    pub fn frame_len(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[linear_index(self.dims, x, y, z)]
    }

    pub fn frame(&self, z: usize) -> Plane<f32> {
        let n = self.frame_len();
        Plane::new(self.dims[0], self.dims[1], self.data[z * n..(z + 1) * n].to_vec())
    }

    /// Builds a volume from equally sized frames.
    pub fn from_frames(frames: &[Plane<f32>], spacing: VoxelSpacing, coord: CoordSystem) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidShape("no frames".into()))?;
        let (nx, ny) = (first.nx, first.ny);
        let mut data = Vec::with_capacity(nx * ny * frames.len());
        for f in frames {
            if f.nx != nx || f.ny != ny {
                return Err(Error::ShapeMismatch {
                    left: [nx, ny, 1],
                    right: [f.nx, f.ny, 1],
                });
            }
            data.extend_from_slice(&f.data);
        }
        Volume::new([nx, ny, frames.len()], data, spacing, coord)
    }

    /// Global intensity scaling, the only photometric change that keeps the
    /// attenuation model intact. `factor` must lie in `[0.9, 1.1]`.
    pub fn scale_intensity(&self, factor: f32) -> Result<Self> {
        if !(0.9..=1.1).contains(&factor) {
            return Err(Error::InvalidConfig(format!(
                "intensity scale {factor} outside [0.9, 1.1]"
            )));
        }
        let data = self.data.iter().map(|v| (v * factor).clamp(0.0, 1.0)).collect();
        Volume::new(self.dims, data, self.spacing, self.coord)
    }
}

/// Binary ground-truth or predicted mask paired with a [`Volume`].
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    dims: Dims,
    mask: Vec<bool>,
    target: Target,
    spacing: VoxelSpacing,
    coord: CoordSystem,
}

impl LabelVolume {
    pub fn new(
        dims: Dims,
        mask: Vec<bool>,
        target: Target,
        spacing: VoxelSpacing,
        coord: CoordSystem,
    ) -> Result<Self> {
        check_dims(dims, mask.len())?;
        spacing.validate()?;
        Ok(LabelVolume {
            dims,
            mask,
            target,
            spacing,
            coord,
        })
    }

    pub fn empty(dims: Dims, target: Target, spacing: VoxelSpacing, coord: CoordSystem) -> Result<Self> {
        let n = dims.iter().product();
        LabelVolume::new(dims, vec![false; n], target, spacing, coord)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }
    pub fn into_mask(self) -> Vec<bool> {
        self.mask
    }
    pub fn target(&self) -> Target {
        self.target
    }
    pub fn spacing(&self) -> VoxelSpacing {
        self.spacing
    }
    pub fn coord_system(&self) -> CoordSystem {
        self.coord
    }
    pub fn frames(&self) -> usize {
        self.dims[2]
    }
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.mask[linear_index(self.dims, x, y, z)]
    }

    pub fn frame(&self, z: usize) -> Plane<bool> {
        let n = self.dims[0] * self.dims[1];
        Plane::new(self.dims[0], self.dims[1], self.mask[z * n..(z + 1) * n].to_vec())
    }

    pub fn from_frames(
        frames: &[Plane<bool>],
        target: Target,
        spacing: VoxelSpacing,
        coord: CoordSystem,
    ) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidShape("no frames".into()))?;
        let (nx, ny) = (first.nx, first.ny);
        let mut mask = Vec::with_capacity(nx * ny * frames.len());
        for f in frames {
            if f.nx != nx || f.ny != ny {
                return Err(Error::ShapeMismatch {
                    left: [nx, ny, 1],
                    right: [f.nx, f.ny, 1],
                });
            }
            mask.extend_from_slice(&f.data);
        }
        LabelVolume::new([nx, ny, frames.len()], mask, target, spacing, coord)
    }

    pub fn ensure_same_shape(&self, dims: Dims) -> Result<()> {
        if self.dims == dims {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                left: self.dims,
                right: dims,
            })
        }
    }
}

/// A single 2D frame, `x` fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane<T> {
    pub nx: usize,
    pub ny: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Plane<T> {
    pub fn new(nx: usize, ny: usize, data: Vec<T>) -> Self {
        assert_eq!(nx * ny, data.len(), "plane data does not match {nx}x{ny}");
        Plane { nx, ny, data }
    }

    pub fn filled(nx: usize, ny: usize, value: T) -> Self {
        Plane {
            nx,
            ny,
            data: vec![value; nx * ny],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[x + self.nx * y]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[x + self.nx * y] = v;
    }
}
