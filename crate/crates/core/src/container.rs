//! On-disk volume container: a TOML sidecar `<name>.meta` next to a raw
//! little-endian payload `<name>.raw` in x-fastest, frame-slowest order.
//!
//! Image volumes are written as `f32`; label masks as `u8` holding 0 or 1.
//! Label masks that belong to an image live next to it as
//! `<name>.stent.{meta,raw}` and `<name>.lumen.{meta,raw}`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{
    CoordSystem, Dims, LabelVolume, Target, Volume, VoxelSpacing, DEFAULT_ALINES_PER_FRAME,
};

pub const FORMAT_NAME: &str = "dcca-volume";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContentKind {
    Image,
    Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarType {
    F32,
    U8,
    U16,
}

impl ScalarType {
    pub fn size(&self) -> usize {
        match self {
            ScalarType::F32 => 4,
            ScalarType::U8 => 1,
            ScalarType::U16 => 2,
        }
    }
}

fn default_alines() -> usize {
    DEFAULT_ALINES_PER_FRAME
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub format: String,
    pub version: u32,
    pub kind: ContentKind,
    pub dims: [usize; 3],
    pub spacing_um: [f64; 3],
    pub coord_system: CoordSystem,
    pub scalar_type: ScalarType,
    #[serde(default)]
    pub normalize: bool,
    /// A-lines per frame of the acquisition. For polar volumes this must equal `dims[1]`.
    #[serde(default = "default_alines")]
    pub alines_per_frame: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Target>,
}

impl Metadata {
    pub fn for_volume(v: &Volume) -> Self {
        let dims = v.dims();
        Metadata {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            kind: ContentKind::Image,
            dims,
            spacing_um: v.spacing().as_array(),
            coord_system: v.coord_system(),
            scalar_type: ScalarType::F32,
            normalize: false,
            alines_per_frame: alines_for(v.coord_system(), dims),
            target: None,
        }
    }

    pub fn for_labels(l: &LabelVolume) -> Self {
        let dims = l.dims();
        Metadata {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            kind: ContentKind::Label,
            dims,
            spacing_um: l.spacing().as_array(),
            coord_system: l.coord_system(),
            scalar_type: ScalarType::U8,
            normalize: false,
            alines_per_frame: alines_for(l.coord_system(), dims),
            target: Some(l.target()),
        }
    }

    /// Parses and validates sidecar text.
    pub fn parse(text: &str) -> Result<Self> {
        let meta: Metadata = toml::from_str(text).map_err(|e| Error::Metadata(e.to_string()))?;
        meta.validate()?;
        Ok(meta)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("metadata always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != FORMAT_NAME {
            return Err(Error::Metadata(format!("unknown format {:?}", self.format)));
        }
        if self.version != FORMAT_VERSION {
            return Err(Error::Metadata(format!("unsupported version {}", self.version)));
        }
        if self.dims.contains(&0) {
            return Err(Error::Metadata(format!("zero-sized dims {:?}", self.dims)));
        }
        self.spacing().validate()?;
        if self.coord_system == CoordSystem::Polar && self.alines_per_frame != self.dims[1] {
            return Err(Error::Metadata(format!(
                "polar volume has {} A-lines per frame but alines_per_frame = {}",
                self.dims[1], self.alines_per_frame
            )));
        }
        match self.kind {
            ContentKind::Label => {
                if self.scalar_type != ScalarType::U8 {
                    return Err(Error::Metadata("label payloads must be u8".into()));
                }
                if self.target.is_none() {
                    return Err(Error::Metadata("label sidecar needs a target".into()));
                }
            }
            ContentKind::Image => {
                if self.target.is_some() {
                    return Err(Error::Metadata("image sidecar must not carry a target".into()));
                }
            }
        }
        Ok(())
    }

    pub fn spacing(&self) -> VoxelSpacing {
        let [dx_um, dy_um, dz_um] = self.spacing_um;
        VoxelSpacing { dx_um, dy_um, dz_um }
    }

    /// Expected payload length in bytes, or `None` on overflow.
    pub fn payload_len(&self) -> Option<usize> {
        self.dims
            .iter()
            .try_fold(self.scalar_type.size(), |acc, &d| acc.checked_mul(d))
    }

    fn check_len(&self, bytes: &[u8]) -> Result<usize> {
        let expected = self
            .payload_len()
            .ok_or_else(|| Error::Metadata(format!("dims {:?} overflow", self.dims)))?;
        if expected != bytes.len() {
            return Err(Error::LengthMismatch {
                expected,
                actual: bytes.len(),
            });
        }
        Ok(expected / self.scalar_type.size())
    }
}

fn alines_for(coord: CoordSystem, dims: Dims) -> usize {
    match coord {
        CoordSystem::Polar => dims[1],
        CoordSystem::Cartesian => DEFAULT_ALINES_PER_FRAME,
    }
}

/// Decodes an image payload according to its sidecar.
pub fn decode_volume(meta: &Metadata, bytes: &[u8]) -> Result<Volume> {
    meta.validate()?;
    if meta.kind != ContentKind::Image {
        return Err(Error::Metadata("expected an image container".into()));
    }
    meta.check_len(bytes)?;
    let data: Vec<f32> = match meta.scalar_type {
        ScalarType::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
        ScalarType::U8 => bytes.iter().map(|&b| b as f32).collect(),
        ScalarType::U16 => bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) as f32)
            .collect(),
    };
    if meta.normalize {
        Volume::normalized(meta.dims, data, meta.spacing(), meta.coord_system)
    } else {
        Volume::new(meta.dims, data, meta.spacing(), meta.coord_system)
    }
}

/// Decodes a label payload according to its sidecar. Bytes must be 0 or 1.
pub fn decode_labels(meta: &Metadata, bytes: &[u8]) -> Result<LabelVolume> {
    meta.validate()?;
    if meta.kind != ContentKind::Label {
        return Err(Error::Metadata("expected a label container".into()));
    }
    meta.check_len(bytes)?;
    let mut mask = Vec::with_capacity(bytes.len());
    for (i, &b) in bytes.iter().enumerate() {
        match b {
            0 => mask.push(false),
            1 => mask.push(true),
            other => {
                return Err(Error::Metadata(format!(
                    "label byte {other} at index {i} is not 0/1"
                )))
            }
        }
    }
    let target = meta.target.expect("validated");
    LabelVolume::new(meta.dims, mask, target, meta.spacing(), meta.coord_system)
}

pub fn encode_volume(v: &Volume) -> Vec<u8> {
    let mut out = Vec::with_capacity(v.data().len() * 4);
    for x in v.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn encode_labels(l: &LabelVolume) -> Vec<u8> {
    l.mask().iter().map(|&m| m as u8).collect()
}

/// Strips a trailing `.meta` or `.raw` so either file, or the bare stem, names a container.
pub fn container_stem(path: &Path) -> PathBuf {
    let s = path.as_os_str().to_string_lossy();
    for ext in [".meta", ".raw"] {
        if let Some(stem) = s.strip_suffix(ext) {
            return PathBuf::from(stem);
        }
    }
    path.to_path_buf()
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn meta_path(path: &Path) -> PathBuf {
    with_suffix(&container_stem(path), ".meta")
}

pub fn raw_path(path: &Path) -> PathBuf {
    with_suffix(&container_stem(path), ".raw")
}

/// Stem of the label container paired with an image stem.
pub fn label_stem(image: &Path, target: Target) -> PathBuf {
    with_suffix(&container_stem(image), &format!(".{}", target.as_str()))
}

fn read_container(path: &Path) -> Result<(Metadata, Vec<u8>)> {
    let meta_file = meta_path(path);
    if !meta_file.is_file() {
        return Err(Error::MissingSidecar(meta_file));
    }
    let text = fs::read_to_string(&meta_file).map_err(|e| Error::io(&meta_file, e))?;
    let meta = Metadata::parse(&text)?;
    let raw = raw_path(path);
    let bytes = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
    Ok((meta, bytes))
}

fn write_container(path: &Path, meta: &Metadata, bytes: &[u8]) -> Result<()> {
    let stem = container_stem(path);
    if let Some(parent) = stem.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let m = meta_path(&stem);
    fs::write(&m, meta.to_text()).map_err(|e| Error::io(&m, e))?;
    let r = raw_path(&stem);
    fs::write(&r, bytes).map_err(|e| Error::io(&r, e))?;
    Ok(())
}

pub fn save_volume(v: &Volume, path: &Path) -> Result<()> {
    write_container(path, &Metadata::for_volume(v), &encode_volume(v))
}

pub fn save_labels(l: &LabelVolume, path: &Path) -> Result<()> {
    write_container(path, &Metadata::for_labels(l), &encode_labels(l))
}

/// Writes an image plus any labels as paired sibling containers.
pub fn save_with_labels(v: &Volume, labels: &[&LabelVolume], path: &Path) -> Result<()> {
    save_volume(v, path)?;
    for l in labels {
        l.ensure_same_shape(v.dims())?;
        save_labels(l, &label_stem(path, l.target()))?;
    }
    Ok(())
}

pub fn load_labels(path: &Path) -> Result<LabelVolume> {
    let (meta, bytes) = read_container(path)?;
    decode_labels(&meta, &bytes)
}

#[derive(Debug, Clone)]
pub struct LoadedVolume {
    pub volume: Volume,
    pub stent: Option<LabelVolume>,
    pub lumen: Option<LabelVolume>,
}

/// Loads an image container and whichever paired label containers exist.
pub fn load_volume(path: &Path) -> Result<LoadedVolume> {
    let (meta, bytes) = read_container(path)?;
    let volume = decode_volume(&meta, &bytes)?;
    let paired = |target: Target| -> Result<Option<LabelVolume>> {
        let stem = label_stem(path, target);
        if !meta_path(&stem).is_file() {
            return Ok(None);
        }
        let l = load_labels(&stem)?;
        l.ensure_same_shape(volume.dims())?;
        if l.target() != target {
            return Err(Error::Metadata(format!(
                "{} holds a {:?} mask",
                stem.display(),
                l.target()
            )));
        }
        Ok(Some(l))
    };
    let stent = paired(Target::Stent)?;
    let lumen = paired(Target::Lumen)?;
    Ok(LoadedVolume {
        volume,
        stent,
        lumen,
    })
}
