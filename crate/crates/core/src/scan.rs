//! Polar/Cartesian scan conversion.
//!
//! A polar frame has radial samples along `x` and A-lines along `y`. A-line
//! `a` of `n` points at angle `2πa/n`, measured from the `+x` axis towards
//! `+y`. Radial sample `s` of `S` sits at radius `s / (S - 1) · R`, where the
//! Cartesian disc radius `R` is half the (smaller) output side in pixels.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::volume::{CoordSystem, LabelVolume, Plane, Volume, VoxelSpacing};

/// Default centre for a square image of side `n`: the pixel at `(n/2, n/2)`,
/// so the four axis-aligned A-lines land exactly on pixel rows/columns.
pub fn default_center(n: usize) -> (f64, f64) {
    let c = (n / 2) as f64;
    (c, c)
}

fn disc_radius(nx: usize, ny: usize) -> f64 {
    (nx.min(ny) / 2) as f64
}

/// Resamples a polar frame onto an `out_size`² Cartesian grid with bilinear
/// interpolation. Pixels beyond the disc radius are 0.
pub fn polar_to_cartesian(frame: &Plane<f32>, out_size: usize, center: (f64, f64)) -> Plane<f32> {
    assert!(frame.nx >= 1 && frame.ny >= 1, "polar frame needs at least one A-line");
    assert!(out_size >= 2, "output size must be at least 2");
    let samples = frame.nx;
    let alines = frame.ny;
    let r_max = disc_radius(out_size, out_size);
    let mut out = Plane::filled(out_size, out_size, 0.0f32);
    for y in 0..out_size {
        for x in 0..out_size {
            let dx = x as f64 - center.0;
            let dy = y as f64 - center.1;
            let r = dx.hypot(dy);
            if r > r_max {
                continue;
            }
            let s = if samples > 1 { r / r_max * (samples - 1) as f64 } else { 0.0 };
            let theta = dy.atan2(dx).rem_euclid(TAU);
            let a = theta / TAU * alines as f64;
            out.set(x, y, sample_polar(frame, s, a));
        }
    }
    out
}

/// Bilinear lookup at fractional (sample, A-line); the angular axis wraps.
fn sample_polar(frame: &Plane<f32>, s: f64, a: f64) -> f32 {
    let samples = frame.nx;
    let alines = frame.ny;
    let s0 = (s.floor() as usize).min(samples - 1);
    let s1 = (s0 + 1).min(samples - 1);
    let fs = (s - s0 as f64).clamp(0.0, 1.0);
    let a_floor = a.floor();
    let fa = a - a_floor;
    let a0 = (a_floor as usize) % alines;
    let a1 = (a0 + 1) % alines;
    let v00 = frame.get(s0, a0) as f64;
    let v10 = frame.get(s1, a0) as f64;
    let v01 = frame.get(s0, a1) as f64;
    let v11 = frame.get(s1, a1) as f64;
    let v0 = v00 + (v10 - v00) * fs;
    let v1 = v01 + (v11 - v01) * fs;
    (v0 + (v1 - v0) * fa) as f32
}

/// Bilinear lookup in a Cartesian image; samples outside the grid read as 0.
fn sample_cartesian(img: &Plane<f32>, x: f64, y: f64) -> f32 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let at = |xi: f64, yi: f64| -> f64 {
        if xi < 0.0 || yi < 0.0 || xi >= img.nx as f64 || yi >= img.ny as f64 {
            0.0
        } else {
            img.get(xi as usize, yi as usize) as f64
        }
    };
    let v0 = at(x0, y0) * (1.0 - fx) + at(x0 + 1.0, y0) * fx;
    let v1 = at(x0, y0 + 1.0) * (1.0 - fx) + at(x0 + 1.0, y0 + 1.0) * fx;
    (v0 * (1.0 - fy) + v1 * fy) as f32
}

/// Inverse of [`polar_to_cartesian`]: samples `n_alines` rays of
/// `samples_per_aline` points out to the disc radius.
pub fn cartesian_to_polar(
    image: &Plane<f32>,
    n_alines: usize,
    samples_per_aline: usize,
    center: (f64, f64),
) -> Plane<f32> {
    assert!(n_alines >= 1, "need at least one A-line");
    assert!(samples_per_aline >= 1, "need at least one sample per A-line");
    let r_max = disc_radius(image.nx, image.ny);
    let mut out = Plane::filled(samples_per_aline, n_alines, 0.0f32);
    for a in 0..n_alines {
        let theta = TAU * a as f64 / n_alines as f64;
        let (sin, cos) = theta.sin_cos();
        for s in 0..samples_per_aline {
            let r = if samples_per_aline > 1 {
                s as f64 / (samples_per_aline - 1) as f64 * r_max
            } else {
                0.0
            };
            out.set(s, a, sample_cartesian(image, center.0 + r * cos, center.1 + r * sin));
        }
    }
    out
}

/// Cartesian pixel pitch (μm) for a polar volume with radial pitch `dr_um`
/// scan-converted to `out_size` pixels.
pub fn cartesian_pitch_um(samples_per_aline: usize, dr_um: f64, out_size: usize) -> f64 {
    let r_max_um = (samples_per_aline.max(2) - 1) as f64 * dr_um;
    r_max_um / disc_radius(out_size, out_size)
}

fn cartesian_spacing(src: VoxelSpacing, samples: usize, out_size: usize) -> VoxelSpacing {
    let pitch = cartesian_pitch_um(samples, src.dx_um, out_size);
    VoxelSpacing {
        dx_um: pitch,
        dy_um: pitch,
        dz_um: src.dz_um,
    }
}

/// Scan-converts every frame of a polar volume.
pub fn volume_to_cartesian(v: &Volume, out_size: usize) -> Result<Volume> {
    if v.coord_system() != CoordSystem::Polar {
        return Err(Error::CoordSystem {
            expected: CoordSystem::Polar,
            actual: v.coord_system(),
        });
    }
    let center = default_center(out_size);
    let frames: Vec<Plane<f32>> = (0..v.frames())
        .map(|z| {
            let mut p = polar_to_cartesian(&v.frame(z), out_size, center);
            for x in &mut p.data {
                *x = x.clamp(0.0, 1.0);
            }
            p
        })
        .collect();
    Volume::from_frames(
        &frames,
        cartesian_spacing(v.spacing(), v.dims()[0], out_size),
        CoordSystem::Cartesian,
    )
}

/// Scan-converts a polar mask: bilinear interpolation of the 0/1 indicator, then `>= 0.5`.
pub fn labels_to_cartesian(l: &LabelVolume, out_size: usize) -> Result<LabelVolume> {
    if l.coord_system() != CoordSystem::Polar {
        return Err(Error::CoordSystem {
            expected: CoordSystem::Polar,
            actual: l.coord_system(),
        });
    }
    let center = default_center(out_size);
    let frames: Vec<Plane<bool>> = (0..l.frames())
        .map(|z| {
            let f = l.frame(z);
            let as_float = Plane::new(f.nx, f.ny, f.data.iter().map(|&m| m as u8 as f32).collect());
            let c = polar_to_cartesian(&as_float, out_size, center);
            Plane::new(out_size, out_size, c.data.iter().map(|&v| v >= 0.5).collect())
        })
        .collect();
    LabelVolume::from_frames(
        &frames,
        l.target(),
        cartesian_spacing(l.spacing(), l.dims()[0], out_size),
        CoordSystem::Cartesian,
    )
}
