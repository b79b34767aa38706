//! PNG-stack ingestion: a directory of `frame_%05d.png` greyscale frames
//! becomes one volume container.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use image::{DynamicImage, ImageFormat};

use dcca_core::{CoordSystem, Plane, Volume, VoxelSpacing};

/// Decodes one PNG frame to intensities in `[0, 1]`: 8-bit samples are divided
/// by 255, everything else is converted to 16-bit luma and divided by 65535.
pub fn decode_png_frame(bytes: &[u8]) -> Result<Plane<f32>> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png).context("decoding PNG")?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = match img {
        DynamicImage::ImageLuma8(g) => g.into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
        other => other
            .into_luma16()
            .into_raw()
            .into_iter()
            .map(|v| v as f32 / 65535.0)
            .collect(),
    };
    Ok(Plane::new(w, h, data))
}

/// `frame_NNNNN.png` files of `dir`, ordered by frame number.
pub fn frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut frames = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let p = entry?.path();
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if let Some(num) = name.strip_prefix("frame_").and_then(|n| n.strip_suffix(".png")) {
            if let Ok(i) = num.parse::<usize>() {
                frames.push((i, p));
            }
        }
    }
    if frames.is_empty() {
        bail!("no frame_NNNNN.png files in {}", dir.display());
    }
    frames.sort();
    Ok(frames.into_iter().map(|(_, p)| p).collect())
}

/// Stacks the frames of `dir` into a volume. Every frame must share one size.
pub fn ingest_frames(dir: &Path, spacing: VoxelSpacing, coord: CoordSystem) -> Result<(Volume, Vec<PathBuf>)> {
    let files = frame_files(dir)?;
    let mut planes = Vec::with_capacity(files.len());
    for f in &files {
        let bytes = fs::read(f).with_context(|| format!("reading {}", f.display()))?;
        let p = decode_png_frame(&bytes).with_context(|| f.display().to_string())?;
        if let Some(first) = planes.first() {
            let first: &Plane<f32> = first;
            if (first.nx, first.ny) != (p.nx, p.ny) {
                bail!("{} is {}x{}, expected {}x{}", f.display(), p.nx, p.ny, first.nx, first.ny);
            }
        }
        planes.push(p);
    }
    Ok((Volume::from_frames(&planes, spacing, coord)?, files))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{ImageBuffer, Luma};
    use std::io::Cursor;

    fn png<P: image::Pixel<Subpixel = S> + image::PixelWithColorType, S: image::Primitive>(
        img: ImageBuffer<P, Vec<S>>,
    ) -> Vec<u8>
    where
        [S]: image::EncodableLayout,
    {
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png).unwrap();
        out.into_inner()
    }

    #[test]
    fn eight_and_sixteen_bit_frames_normalize() {
        let a = ImageBuffer::<Luma<u8>, _>::from_raw(2, 1, vec![0u8, 255]).unwrap();
        assert_eq!(decode_png_frame(&png(a)).unwrap().data, vec![0.0, 1.0]);
        let b = ImageBuffer::<Luma<u16>, _>::from_raw(1, 2, vec![65535u16, 0]).unwrap();
        let p = decode_png_frame(&png(b)).unwrap();
        assert_eq!((p.nx, p.ny, p.data), (1, 2, vec![1.0, 0.0]));
        assert!(decode_png_frame(b"not a png").is_err());
    }

    #[test]
    fn stacks_frames_in_numeric_order() {
        let dir = tempfile::tempdir().unwrap();
        for (i, v) in [(10, 30u8), (2, 20), (1, 10)] {
            let img = ImageBuffer::<Luma<u8>, _>::from_raw(2, 2, vec![v; 4]).unwrap();
            fs::write(dir.path().join(format!("frame_{i:05}.png")), png(img)).unwrap();
        }
        fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let (v, files) = ingest_frames(dir.path(), VoxelSpacing::default(), CoordSystem::Cartesian).unwrap();
        assert_eq!(files.len(), 3);
        assert_eq!(v.dims(), [2, 2, 3]);
        assert_eq!(v.get(0, 0, 0), 10.0 / 255.0);
        assert_eq!(v.get(1, 1, 2), 30.0 / 255.0);
    }
}
