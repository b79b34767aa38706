//! Synthetic IV-OCT pullbacks with exact ground truth.
//!
//! Each A-line is rendered in polar space: dark lumen up to the wall, then
//! `A·exp(-μ·depth)` tissue, multiplied by unit-mean speckle. A strut is a
//! saturated disc that leaves a near-black shadow behind it along the ray.
//! Struts ride on `struts_per_turn` helical wires; apposition modes move the
//! wire radially relative to the lumen wall, which itself never changes.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scan;
use crate::volume::{linear_index, CoordSystem, LabelVolume, Target, Volume, VoxelSpacing};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub frames: usize,
    pub samples_per_aline: usize,
    pub alines_per_frame: usize,
    pub radial_pitch_um: f64,
    pub frame_pitch_um: f64,
    pub lumen: LumenProfile,
    pub stent: StentGeometry,
    #[serde(default)]
    pub segments: Vec<Segment>,
    #[serde(default)]
    pub bifurcations: Vec<Bifurcation>,
    #[serde(default)]
    pub optics: Optics,
    #[serde(default)]
    pub speckle: Speckle,
    pub seed: u64,
}

/// Lumen radius as a piecewise-linear profile over frames, optionally elliptic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LumenProfile {
    /// `(frame, radius_mm)` knots; constant extrapolation outside.
    pub knots: Vec<[f64; 2]>,
    #[serde(default)]
    pub ellipticity: f64,
    #[serde(default)]
    pub ellipse_angle_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StentGeometry {
    /// Frames per full turn of each wire.
    pub pitch_frames: f64,
    pub struts_per_turn: usize,
    pub strut_radius_mm: f64,
    /// Uniform angular jitter as a fraction of the strut spacing.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
}

fn default_jitter() -> f64 {
    0.2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Apposition {
    Apposed,
    Malapposed { gap_mm: f64 },
    Covered { thickness_mm: f64 },
}

impl Apposition {
    /// Radial offset of the strut centre from the lumen wall (mm, outward positive).
    pub fn radial_offset_mm(&self) -> f64 {
        match *self {
            Apposition::Apposed => 0.0,
            Apposition::Malapposed { gap_mm } => -gap_mm,
            Apposition::Covered { thickness_mm } => thickness_mm,
        }
    }

    pub fn distance_mm(&self) -> f64 {
        self.radial_offset_mm().abs()
    }
}

/// Frames `start..end` rendered with the given apposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    #[serde(flatten)]
    pub mode: Apposition,
}

/// Side-branch ostium: an angular sector with no wall over `start..end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bifurcation {
    pub start: usize,
    pub end: usize,
    pub angle_deg: f64,
    pub width_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Optics {
    pub wall_reflectance: f64,
    pub attenuation_per_mm: f64,
    pub strut_level: f64,
    pub shadow_factor: f64,
    pub lumen_level: f64,
}

impl Default for Optics {
    fn default() -> Self {
        Optics {
            wall_reflectance: 0.5,
            attenuation_per_mm: 2.5,
            strut_level: 1.0,
            shadow_factor: 0.03,
            lumen_level: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase", deny_unknown_fields)]
pub enum Speckle {
    None,
    /// Unit-mean exponential noise, averaged over `looks` draws (1 = plain exponential).
    Exponential {
        #[serde(default = "one")]
        looks: u32,
    },
}

fn one() -> u32 {
    1
}

impl Default for Speckle {
    fn default() -> Self {
        Speckle::Exponential { looks: 1 }
    }
}

#[derive(Debug, Clone)]
pub struct Phantom {
    pub image: Volume,
    pub stent: LabelVolume,
    pub lumen: LabelVolume,
}

impl Phantom {
    /// Scan-converts image and labels onto an `out_size`² Cartesian grid.
    pub fn to_cartesian(&self, out_size: usize) -> Result<Phantom> {
        Ok(Phantom {
            image: scan::volume_to_cartesian(&self.image, out_size)?,
            stent: scan::labels_to_cartesian(&self.stent, out_size)?,
            lumen: scan::labels_to_cartesian(&self.lumen, out_size)?,
        })
    }
}

/// Per-frame apposition read straight from the [`PhantomSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpectedFrame {
    pub frame: usize,
    pub mode: Apposition,
    pub distance_mm: f64,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::InvalidSpec(msg.into())
}

impl PhantomSpec {
    /// Imaging depth covered by one A-line (mm).
    pub fn max_radius_mm(&self) -> f64 {
        (self.samples_per_aline - 1) as f64 * self.radial_pitch_um / 1000.0
    }

    pub fn spacing(&self) -> VoxelSpacing {
        VoxelSpacing {
            dx_um: self.radial_pitch_um,
            dy_um: self.radial_pitch_um,
            dz_um: self.frame_pitch_um,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.alines_per_frame == 0 || self.samples_per_aline < 2 {
            return Err(bad("need frames >= 1, A-lines >= 1 and samples >= 2"));
        }
        self.spacing().validate()?;
        let l = &self.lumen;
        if l.knots.is_empty() {
            return Err(bad("lumen profile needs at least one knot"));
        }
        if l.knots.windows(2).any(|w| w[1][0] <= w[0][0]) {
            return Err(bad("lumen knots must have strictly increasing frames"));
        }
        if !(0.0..0.5).contains(&l.ellipticity) || !l.ellipse_angle_deg.is_finite() {
            return Err(bad("ellipticity must lie in [0, 0.5)"));
        }
        let s = &self.stent;
        if !(s.strut_radius_mm.is_finite() && s.strut_radius_mm > 0.0) {
            return Err(bad("strut radius must be positive"));
        }
        if !(s.pitch_frames.is_finite() && s.pitch_frames != 0.0) {
            return Err(bad("helix pitch must be finite and non-zero"));
        }
        if !(0.0..0.5).contains(&s.jitter) {
            return Err(bad("jitter must lie in [0, 0.5)"));
        }
        let r_min = l.knots.iter().map(|k| k[1]).fold(f64::INFINITY, f64::min) * (1.0 - l.ellipticity);
        if !(r_min.is_finite() && r_min > s.strut_radius_mm) {
            return Err(bad("strut radius must be smaller than the lumen radius"));
        }
        let r_max = l.knots.iter().map(|k| k[1]).fold(0.0, f64::max) * (1.0 + l.ellipticity);
        if r_max >= self.max_radius_mm() {
            return Err(bad("lumen extends past the imaging depth"));
        }
        let mut segs = self.segments.clone();
        segs.sort_by_key(|s| s.start);
        for seg in &segs {
            if seg.start >= seg.end || seg.end > self.frames {
                return Err(bad(format!("segment {}..{} outside 0..{}", seg.start, seg.end, self.frames)));
            }
            match seg.mode {
                Apposition::Apposed => {}
                Apposition::Malapposed { gap_mm: d } | Apposition::Covered { thickness_mm: d } => {
                    if !(d.is_finite() && d >= 0.0) {
                        return Err(bad("gap and thickness must be >= 0"));
                    }
                }
            }
            if let Apposition::Malapposed { gap_mm } = seg.mode {
                if gap_mm + s.strut_radius_mm >= r_min {
                    return Err(bad("malapposition gap pushes struts through the catheter"));
                }
            }
        }
        if segs.windows(2).any(|w| w[1].start < w[0].end) {
            return Err(bad("segments overlap"));
        }
        for b in &self.bifurcations {
            if b.start >= b.end || b.end > self.frames || !(b.width_deg > 0.0 && b.width_deg < 360.0) {
                return Err(bad("bifurcation frame range or width invalid"));
            }
        }
        if let Speckle::Exponential { looks: 0 } = self.speckle {
            return Err(bad("speckle looks must be >= 1"));
        }
        let o = &self.optics;
        let optics = [o.wall_reflectance, o.attenuation_per_mm, o.strut_level, o.shadow_factor, o.lumen_level];
        if optics.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(bad("optical parameters must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn mode_at(&self, frame: usize) -> Apposition {
        self.segments
            .iter()
            .find(|s| (s.start..s.end).contains(&frame))
            .map(|s| s.mode)
            .unwrap_or(Apposition::Apposed)
    }

    fn base_radius(&self, frame: usize) -> f64 {
        let k = &self.lumen.knots;
        let f = frame as f64;
        if f <= k[0][0] {
            return k[0][1];
        }
        for w in k.windows(2) {
            if f <= w[1][0] {
                let t = (f - w[0][0]) / (w[1][0] - w[0][0]);
                return w[0][1] + t * (w[1][1] - w[0][1]);
            }
        }
        k[k.len() - 1][1]
    }

    /// Lumen wall radius (mm) at `frame` along angle `theta`.
    pub fn wall_radius(&self, frame: usize, theta: f64) -> f64 {
        let phi = self.lumen.ellipse_angle_deg.to_radians();
        self.base_radius(frame) * (1.0 + self.lumen.ellipticity * (2.0 * (theta - phi)).cos())
    }

    fn in_bifurcation(&self, frame: usize, theta: f64) -> bool {
        self.bifurcations.iter().any(|b| {
            if !(b.start..b.end).contains(&frame) {
                return false;
            }
            let d = (theta - b.angle_deg.to_radians()).rem_euclid(TAU);
            let half = b.width_deg.to_radians() / 2.0;
            d <= half || d >= TAU - half
        })
    }

    /// Strut centres in frame `frame`, in physical millimetres from the catheter axis.
    pub fn strut_centers(&self, frame: usize) -> Vec<[f64; 2]> {
        let s = &self.stent;
        let n = s.struts_per_turn;
        if n == 0 {
            return Vec::new();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(2 * frame as u64 + 1);
        let spacing = TAU / n as f64;
        let offset = self.mode_at(frame).radial_offset_mm();
        (0..n)
            .map(|k| {
                let jitter = if s.jitter > 0.0 {
                    rng.random_range(-s.jitter..=s.jitter) * spacing
                } else {
                    0.0
                };
                let theta = (TAU * frame as f64 / s.pitch_frames + k as f64 * spacing + jitter).rem_euclid(TAU);
                let r = self.wall_radius(frame, theta) + offset;
                [r * theta.cos(), r * theta.sin()]
            })
            .collect()
    }
}

/// Renders the polar pullback and its stent and lumen masks.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let dims = [spec.samples_per_aline, spec.alines_per_frame, spec.frames];
    let n = dims.iter().product();
    let mut image = vec![0.0f32; n];
    let mut stent = vec![false; n];
    let mut lumen = vec![false; n];
    let dr = spec.radial_pitch_um / 1000.0;
    let rs = spec.stent.strut_radius_mm;
    let o = spec.optics;
    for f in 0..spec.frames {
        let struts = spec.strut_centers(f);
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(2 * f as u64);
        for a in 0..spec.alines_per_frame {
            let theta = TAU * a as f64 / spec.alines_per_frame as f64;
            let (sin, cos) = theta.sin_cos();
            let wall = if spec.in_bifurcation(f, theta) {
                f64::INFINITY
            } else {
                spec.wall_radius(f, theta)
            };
            // the ray is dark behind the far edge of the nearest strut it crosses
            let shadow_from = struts
                .iter()
                .filter_map(|c| {
                    let t = c[0] * cos + c[1] * sin;
                    let p = c[0] * sin - c[1] * cos;
                    (t > 0.0 && p.abs() < rs).then(|| t + (rs * rs - p * p).sqrt())
                })
                .fold(f64::INFINITY, f64::min);
            for s in 0..spec.samples_per_aline {
                let r = s as f64 * dr;
                let (px, py) = (r * cos, r * sin);
                let in_strut = struts
                    .iter()
                    .any(|c| (px - c[0]).powi(2) + (py - c[1]).powi(2) <= rs * rs);
                let inside = r < wall;
                let mut v = if inside {
                    o.lumen_level
                } else {
                    o.wall_reflectance * (-o.attenuation_per_mm * (r - wall)).exp()
                };
                v *= speckle(&mut rng, spec.speckle);
                if r > shadow_from {
                    v *= o.shadow_factor;
                }
                if in_strut {
                    v = o.strut_level;
                }
                let i = linear_index(dims, s, a, f);
                image[i] = v.clamp(0.0, 1.0) as f32;
                stent[i] = in_strut;
                lumen[i] = inside;
            }
        }
    }
    let spacing = spec.spacing();
    Ok(Phantom {
        image: Volume::new(dims, image, spacing, CoordSystem::Polar)?,
        stent: LabelVolume::new(dims, stent, Target::Stent, spacing, CoordSystem::Polar)?,
        lumen: LabelVolume::new(dims, lumen, Target::Lumen, spacing, CoordSystem::Polar)?,
    })
}

fn speckle(rng: &mut ChaCha8Rng, law: Speckle) -> f64 {
    match law {
        Speckle::None => 1.0,
        Speckle::Exponential { looks } => {
            let sum: f64 = (0..looks)
                .map(|_| {
                    let u: f64 = rng.random();
                    -(1.0 - u).ln()
                })
                .sum();
            sum / looks as f64
        }
    }
}

/// Analytic per-frame apposition, independent of rendering.
pub fn expected_apposition(spec: &PhantomSpec) -> Vec<ExpectedFrame> {
    (0..spec.frames)
        .map(|frame| {
            let mode = spec.mode_at(frame);
            ExpectedFrame {
                frame,
                mode,
                distance_mm: mode.distance_mm(),
            }
        })
        .collect()
}

/// Compact pullback used by tests and the toy pipeline: 97 radial samples at
/// 15 μm and 256 A-lines, which scan-converts to 96² pixels at 30 μm.
pub fn desk_spec(frames: usize, seed: u64) -> PhantomSpec {
    PhantomSpec {
        frames,
        samples_per_aline: 97,
        alines_per_frame: 256,
        radial_pitch_um: 15.0,
        frame_pitch_um: 200.0,
        lumen: LumenProfile {
            knots: vec![[0.0, 0.9], [frames as f64 / 2.0, 0.82], [frames as f64, 0.95]],
            ellipticity: 0.06,
            ellipse_angle_deg: 30.0,
        },
        stent: StentGeometry {
            pitch_frames: 24.0,
            struts_per_turn: 8,
            strut_radius_mm: 0.06,
            jitter: 0.2,
        },
        segments: Vec::new(),
        bifurcations: Vec::new(),
        optics: Optics::default(),
        speckle: Speckle::default(),
        seed,
    }
}

/// Cartesian grid size for [`fidelity_spec`]: 15 μm pixels.
pub const FIDELITY_CARTESIAN_SIZE: usize = 192;

/// Scripted apposition pullback: malapposed by 0.4 mm over frames 15..60
/// (9 mm), covered by 0.35 mm over 70..90 (4 mm), apposed elsewhere. Finer
/// than [`desk_spec`] so strut discs sit well inside one hue band.
pub fn fidelity_spec(seed: u64) -> PhantomSpec {
    let mut spec = desk_spec(95, seed);
    spec.alines_per_frame = 512;
    spec.stent.strut_radius_mm = 0.05;
    spec.segments = vec![
        Segment { start: 15, end: 60, mode: Apposition::Malapposed { gap_mm: 0.4 } },
        Segment { start: 70, end: 90, mode: Apposition::Covered { thickness_mm: 0.35 } },
    ];
    spec
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_struts_give_empty_stent_mask() {
        let mut spec = desk_spec(4, 1);
        spec.stent.struts_per_turn = 0;
        let p = generate_phantom(&spec).unwrap();
        assert_eq!(p.stent.count(), 0);
        assert!(p.lumen.count() > 0);
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let spec = desk_spec(3, 42);
        let a = generate_phantom(&spec).unwrap();
        let b = generate_phantom(&spec).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.stent, b.stent);
        let mut other = spec.clone();
        other.seed = 43;
        assert_ne!(generate_phantom(&other).unwrap().image, a.image);
    }

    #[test]
    fn expected_apposition_reads_segments() {
        let mut spec = desk_spec(30, 0);
        spec.segments = vec![
            Segment { start: 5, end: 10, mode: Apposition::Malapposed { gap_mm: 0.4 } },
            Segment { start: 20, end: 25, mode: Apposition::Covered { thickness_mm: 0.35 } },
        ];
        let e = expected_apposition(&spec);
        assert_eq!(e[0].distance_mm, 0.0);
        assert_eq!(e[0].mode, Apposition::Apposed);
        assert_eq!(e[7].distance_mm, 0.4);
        assert_eq!(e[22].distance_mm, 0.35);
        assert_eq!(e[22].mode, Apposition::Covered { thickness_mm: 0.35 });
    }

    #[test]
    fn malapposed_struts_float_and_covered_struts_do_not() {
        let mut spec = desk_spec(8, 3);
        spec.segments = vec![
            Segment { start: 0, end: 4, mode: Apposition::Malapposed { gap_mm: 0.4 } },
            Segment { start: 4, end: 8, mode: Apposition::Covered { thickness_mm: 0.35 } },
        ];
        let p = generate_phantom(&spec).unwrap();
        let fl = p.stent.dims()[0] * p.stent.dims()[1];
        let overlap = |frames: std::ops::Range<usize>| {
            frames
                .flat_map(|z| z * fl..(z + 1) * fl)
                .filter(|&i| p.stent.mask()[i] && p.lumen.mask()[i])
                .count()
        };
        assert!(overlap(0..4) > 0);
        assert_eq!(overlap(4..8), 0);
    }

    #[test]
    fn struts_cast_shadows() {
        let mut spec = desk_spec(6, 9);
        spec.speckle = Speckle::Exponential { looks: 1 };
        let p = generate_phantom(&spec).unwrap();
        let [ns, na, nf] = p.image.dims();
        // unshadowed tissue mean per depth sample, from A-lines without struts
        let mut tissue = vec![(0.0f64, 0usize); ns];
        let mut strut_lines = Vec::new();
        for f in 0..nf {
            for a in 0..na {
                let hit = (0..ns).rev().find(|&s| p.stent.get(s, a, f));
                match hit {
                    Some(s) => strut_lines.push((f, a, s)),
                    None => {
                        for s in 0..ns {
                            if !p.lumen.get(s, a, f) {
                                tissue[s].0 += p.image.get(s, a, f) as f64;
                                tissue[s].1 += 1;
                            }
                        }
                    }
                }
            }
        }
        assert!(!strut_lines.is_empty());
        let (mut shadow_sum, mut ref_sum) = (0.0, 0.0);
        for &(f, a, last) in &strut_lines {
            for s in last + 1..ns {
                if tissue[s].1 > 0 && !p.lumen.get(s, a, f) {
                    shadow_sum += p.image.get(s, a, f) as f64;
                    ref_sum += tissue[s].0 / tissue[s].1 as f64;
                }
            }
        }
        assert!(shadow_sum <= 0.1 * ref_sum, "{shadow_sum} vs {ref_sum}");
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = desk_spec(10, 0);
        s.segments = vec![
            Segment { start: 0, end: 5, mode: Apposition::Apposed },
            Segment { start: 4, end: 8, mode: Apposition::Apposed },
        ];
        assert!(generate_phantom(&s).is_err());
        let mut s = desk_spec(10, 0);
        s.segments = vec![Segment { start: 0, end: 5, mode: Apposition::Covered { thickness_mm: -0.1 } }];
        assert!(s.validate().is_err());
        let mut s = desk_spec(10, 0);
        s.stent.strut_radius_mm = 2.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let mut spec = desk_spec(12, 5);
        spec.segments = vec![Segment { start: 1, end: 3, mode: Apposition::Malapposed { gap_mm: 0.4 } }];
        spec.bifurcations = vec![Bifurcation { start: 2, end: 6, angle_deg: 90.0, width_deg: 40.0 }];
        let text = toml::to_string(&spec).unwrap();
        let back: PhantomSpec = toml::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}
