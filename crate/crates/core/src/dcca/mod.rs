//! Distance-colour-coded apposition.
//!
//! Each stent voxel (or strut) gets the signed distance to the lumen
//! boundary. Its magnitude maps linearly onto a hue code from 180 (on the
//! wall, green) down to 0 (at or beyond the clamp distance, red). The sign
//! separates malapposition (inside the lumen) from neointimal coverage.

mod distance;
mod mc_table;
mod mesh;
mod ply;

pub use distance::{distance_field, lumen_boundary, DistanceField};
pub use mesh::{lumen_mesh, TriMesh};
pub use ply::{encode_ply, export_ply, ply_header, LUMEN_ALPHA, STENT_ALPHA};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::extract_struts;
use crate::volume::LabelVolume;

pub const HUE_MAX: f64 = 180.0;
pub const DEFAULT_CLAMP_MM: f64 = 0.3;
/// Lumen surface colour before alpha.
pub const LUMEN_RGB: [u8; 3] = [210, 210, 210];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DccaConfig {
    pub d_mm: f64,
    pub hue_max: f64,
    pub per_strut_uniform: bool,
}

impl Default for DccaConfig {
    fn default() -> Self {
        DccaConfig {
            d_mm: DEFAULT_CLAMP_MM,
            hue_max: HUE_MAX,
            per_strut_uniform: false,
        }
    }
}

impl DccaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_mm.is_finite() && self.d_mm > 0.0) {
            return Err(Error::InvalidConfig(format!("clamp distance {} must be > 0", self.d_mm)));
        }
        if self.hue_max != HUE_MAX {
            return Err(Error::InvalidConfig(format!("hue_max is fixed at {HUE_MAX}")));
        }
        Ok(())
    }
}

/// `180 · (1 − min(|d|, D) / D)`.
pub fn hue_code(d_mm: f64, cfg: &DccaConfig) -> f64 {
    cfg.hue_max * (1.0 - d_mm.abs().min(cfg.d_mm) / cfg.d_mm)
}

/// Renders a hue code as an 8-bit colour: code 0 is red, 180 is green, with
/// the code scaled onto 0°–120° of the standard HSV wheel at full S and V.
pub fn code_to_rgb(code: f64) -> Result<[u8; 3]> {
    if !(0.0..=HUE_MAX).contains(&code) {
        return Err(Error::InvalidConfig(format!("hue code {code} outside [0, {HUE_MAX}]")));
    }
    let h = code * (120.0 / HUE_MAX) / 60.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as u32 {
        0 => (1.0, x, 0.0),
        _ => (x, 1.0, 0.0),
    };
    let q = |c: f64| (c * 255.0).round() as u8;
    Ok([q(r), q(g), q(b)])
}

/// One coloured stent voxel.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ColoredPoints {
    pub positions_um: Vec<[f64; 3]>,
    pub distances_mm: Vec<f64>,
    pub codes: Vec<f64>,
    pub rgba: Vec<[u8; 4]>,
}

impl ColoredPoints {
    pub fn len(&self) -> usize {
        self.positions_um.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions_um.is_empty()
    }

    pub fn positions_f32(&self) -> Vec<[f32; 3]> {
        self.positions_um.iter().map(|p| p.map(|c| c as f32)).collect()
    }
}

/// Colours every stent voxel by its own distance, or by its strut's centroid
/// distance when `per_strut_uniform` is set.
pub fn color_stents(stent: &LabelVolume, df: &DistanceField, cfg: &DccaConfig) -> Result<ColoredPoints> {
    cfg.validate()?;
    stent.ensure_same_shape(df.dims())?;
    let sp = stent.spacing();
    let mut out = ColoredPoints::default();
    let push = |x: usize, y: usize, z: usize, d: f64, out: &mut ColoredPoints| -> Result<()> {
        let code = hue_code(d, cfg);
        let [r, g, b] = code_to_rgb(code)?;
        out.positions_um
            .push([x as f64 * sp.dx_um, y as f64 * sp.dy_um, z as f64 * sp.dz_um]);
        out.distances_mm.push(d);
        out.codes.push(code);
        out.rgba.push([r, g, b, STENT_ALPHA]);
        Ok(())
    };
    if cfg.per_strut_uniform {
        for s in extract_struts(stent) {
            let d = df.sample_in_frame(s.frame, s.centroid_um[0], s.centroid_um[1]);
            for &[x, y] in &s.voxels {
                push(x, y, s.frame, d, &mut out)?;
            }
        }
    } else {
        let [nx, ny, nz] = stent.dims();
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    if stent.get(x, y, z) {
                        push(x, y, z, df.get(x, y, z), &mut out)?;
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AppositionClass {
    Well,
    Malapposed,
    Covered,
}

pub fn classify(d_mm: f64, cfg: &DccaConfig) -> AppositionClass {
    if d_mm > cfg.d_mm {
        AppositionClass::Malapposed
    } else if -d_mm > cfg.d_mm {
        AppositionClass::Covered
    } else {
        AppositionClass::Well
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrutRecord {
    pub frame: usize,
    pub centroid_um: [f64; 2],
    pub voxel_count: usize,
    pub distance_mm: f64,
    pub hue_code: f64,
    pub class: AppositionClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSegment {
    pub class: AppositionClass,
    pub start_frame: usize,
    /// Exclusive.
    pub end_frame: usize,
    pub frames: usize,
    pub length_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppositionReport {
    pub clamp_mm: f64,
    pub frame_pitch_mm: f64,
    pub total_length_mm: f64,
    pub struts: Vec<StrutRecord>,
    pub segments: Vec<ReportSegment>,
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Per-strut centroid distances and classes, plus segments: maximal runs of
/// frames whose median signed strut distance falls in the same non-well
/// class. Frames without struts end a run.
pub fn apposition_report(
    stent: &LabelVolume,
    lumen: &LabelVolume,
    df: &DistanceField,
    cfg: &DccaConfig,
) -> Result<AppositionReport> {
    cfg.validate()?;
    stent.ensure_same_shape(lumen.dims())?;
    lumen.ensure_same_shape(df.dims())?;
    let frames = stent.frames();
    let pitch_mm = stent.spacing().dz_um / 1000.0;
    let mut per_frame: Vec<Vec<f64>> = vec![Vec::new(); frames];
    let struts: Vec<StrutRecord> = extract_struts(stent)
        .into_iter()
        .map(|s| {
            let d = df.sample_in_frame(s.frame, s.centroid_um[0], s.centroid_um[1]);
            per_frame[s.frame].push(d);
            StrutRecord {
                frame: s.frame,
                centroid_um: s.centroid_um,
                voxel_count: s.voxel_count,
                distance_mm: d,
                hue_code: hue_code(d, cfg),
                class: classify(d, cfg),
            }
        })
        .collect();
    let frame_class: Vec<Option<AppositionClass>> = per_frame
        .iter_mut()
        .map(|d| median(d).map(|m| classify(m, cfg)))
        .collect();
    let mut segments = Vec::new();
    let mut f = 0;
    while f < frames {
        match frame_class[f] {
            Some(class) if class != AppositionClass::Well => {
                let start = f;
                while f < frames && frame_class[f] == Some(class) {
                    f += 1;
                }
                segments.push(ReportSegment {
                    class,
                    start_frame: start,
                    end_frame: f,
                    frames: f - start,
                    length_mm: (f - start) as f64 * pitch_mm,
                });
            }
            _ => f += 1,
        }
    }
    Ok(AppositionReport {
        clamp_mm: cfg.d_mm,
        frame_pitch_mm: pitch_mm,
        total_length_mm: frames as f64 * pitch_mm,
        struts,
        segments,
    })
}

/// Lumen surface vertices as f32 μm with the semi-transparent lumen colour.
pub fn lumen_ply_payload(mesh: &TriMesh) -> (Vec<[f32; 3]>, Vec<[u8; 4]>) {
    let [r, g, b] = LUMEN_RGB;
    let verts = mesh.vertices_um.iter().map(|p| p.map(|c| c as f32)).collect();
    (verts, vec![[r, g, b, LUMEN_ALPHA]; mesh.vertices_um.len()])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hue_endpoints() {
        let cfg = DccaConfig::default();
        assert_eq!(hue_code(0.0, &cfg), 180.0);
        assert_eq!(hue_code(0.3, &cfg), 0.0);
        assert_eq!(hue_code(-0.3, &cfg), 0.0);
        assert_eq!(hue_code(1.7, &cfg), 0.0);
        assert_eq!(hue_code(0.15, &cfg), 90.0);
        assert_eq!(hue_code(-0.15, &cfg), 90.0);
    }

    #[test]
    fn rgb_endpoints() {
        assert_eq!(code_to_rgb(0.0).unwrap(), [255, 0, 0]);
        assert_eq!(code_to_rgb(180.0).unwrap(), [0, 255, 0]);
        assert_eq!(code_to_rgb(90.0).unwrap(), [255, 255, 0]);
        assert!(code_to_rgb(180.5).is_err());
        assert!(code_to_rgb(-1.0).is_err());
    }

    #[test]
    fn classes_follow_sign() {
        let cfg = DccaConfig::default();
        assert_eq!(classify(0.31, &cfg), AppositionClass::Malapposed);
        assert_eq!(classify(-0.31, &cfg), AppositionClass::Covered);
        assert_eq!(classify(0.3, &cfg), AppositionClass::Well);
    }

    #[test]
    fn config_checks() {
        assert!(DccaConfig { d_mm: 0.0, ..Default::default() }.validate().is_err());
        assert!(DccaConfig { hue_max: 360.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
    }
}
