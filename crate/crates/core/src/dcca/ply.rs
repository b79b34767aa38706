//! Binary little-endian PLY export with RGBA vertex colours.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Alpha used for lumen surfaces.
pub const LUMEN_ALPHA: u8 = 128;
/// Alpha used for stent points.
pub const STENT_ALPHA: u8 = 255;

pub fn ply_header(vertex_count: usize, face_count: Option<usize>) -> String {
    let mut h = String::from("ply\nformat binary_little_endian 1.0\n");
    h.push_str(&format!("element vertex {vertex_count}\n"));
    for axis in ["x", "y", "z"] {
        h.push_str(&format!("property float {axis}\n"));
    }
    for channel in ["red", "green", "blue", "alpha"] {
        h.push_str(&format!("property uchar {channel}\n"));
    }
    if let Some(n) = face_count {
        h.push_str(&format!("element face {n}\nproperty list uchar int vertex_indices\n"));
    }
    h.push_str("end_header\n");
    h
}

/// Encodes vertices (μm) with per-vertex colours, plus triangles when `faces` is given.
pub fn encode_ply(vertices: &[[f32; 3]], colors: &[[u8; 4]], faces: Option<&[[u32; 3]]>) -> Result<Vec<u8>> {
    if vertices.len() != colors.len() {
        return Err(Error::InvalidShape(format!(
            "{} vertices but {} colours",
            vertices.len(),
            colors.len()
        )));
    }
    let mut out = ply_header(vertices.len(), faces.map(|f| f.len())).into_bytes();
    for (v, c) in vertices.iter().zip(colors) {
        for x in v {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out.extend_from_slice(c);
    }
    if let Some(faces) = faces {
        for f in faces {
            out.push(3);
            for &i in f {
                if i as usize >= vertices.len() || i > i32::MAX as u32 {
                    return Err(Error::InvalidShape(format!("face index {i} out of range")));
                }
                out.extend_from_slice(&(i as i32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn export_ply(
    path: &Path,
    vertices: &[[f32; 3]],
    colors: &[[u8; 4]],
    faces: Option<&[[u32; 3]]>,
) -> Result<()> {
    let bytes = encode_ply(vertices, colors, faces)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_red_point() {
        let bytes = encode_ply(&[[0.0, 0.0, 0.0]], &[[255, 0, 0, 255]], None).unwrap();
        let header = "ply\nformat binary_little_endian 1.0\nelement vertex 1\n\
property float x\nproperty float y\nproperty float z\n\
property uchar red\nproperty uchar green\nproperty uchar blue\nproperty uchar alpha\nend_header\n";
        assert_eq!(&bytes[..header.len()], header.as_bytes());
        let payload = &bytes[header.len()..];
        assert_eq!(payload.len(), 16);
        assert_eq!(payload, &[0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 255, 0, 0, 255]);
    }

    #[test]
    fn empty_point_set_has_zero_count() {
        let bytes = encode_ply(&[], &[], None).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.contains("element vertex 0\n"));
        assert!(text.ends_with("end_header\n"));
    }

    #[test]
    fn misaligned_colours_fail() {
        assert!(encode_ply(&[[0.0; 3]], &[], None).is_err());
        assert!(encode_ply(&[[0.0; 3]], &[[0; 4]], Some(&[[0, 1, 2]])).is_err());
    }
}
