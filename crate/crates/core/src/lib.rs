//! Geometry and data side of 3D distance-colour-coded stent apposition
//! assessment for intravascular OCT.
//!
//! - [`volume`] / [`container`]: volumes, masks and their on-disk format.
//! - [`scan`]: polar/Cartesian scan conversion.
//! - [`phantom`]: synthetic pullbacks with exact ground truth.
//! - [`augment`]: helical sliding-window augmentation.
//! - [`metrics`]: strut centroid matching and voxel overlap scores.
//! - [`dcca`]: signed distance fields, hue coding, meshes, PLY and reports.

pub mod augment;
pub mod container;
pub mod dcca;
pub mod error;
pub mod metrics;
pub mod phantom;
pub mod scan;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{CoordSystem, LabelVolume, Plane, Target, Volume, VoxelSpacing};
