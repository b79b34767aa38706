//! Phantom ground truth against the analytic spec, and the colour coding and
//! report on top of it.

use dcca_core::dcca::{apposition_report, color_stents, distance_field, AppositionClass, DccaConfig};
use dcca_core::metrics::extract_struts;
use dcca_core::phantom::{
    desk_spec, expected_apposition, fidelity_spec, generate_phantom, Apposition, Phantom, Segment,
    FIDELITY_CARTESIAN_SIZE,
};
use dcca_oracles::{boundary_scan, nearest_site_distance};

const DESK_SIZE: usize = 96;

/// Boundary voxel centres in mm, for the point-to-set oracle.
fn boundary_sites(p: &Phantom) -> Vec<[f64; 3]> {
    let dims = p.lumen.dims();
    let [dx, dy, dz] = p.lumen.spacing().mm();
    boundary_scan(p.lumen.mask(), dims)
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(i, _)| {
            let (x, y, z) = (i % dims[0], (i / dims[0]) % dims[1], i / (dims[0] * dims[1]));
            [x as f64 * dx, y as f64 * dy, z as f64 * dz]
        })
        .collect()
}

fn centroid_distances(p: &Phantom, frames: std::ops::Range<usize>) -> Vec<f64> {
    let sites = boundary_sites(p);
    let dz = p.stent.spacing().dz_um / 1000.0;
    extract_struts(&p.stent)
        .iter()
        .filter(|s| frames.contains(&s.frame))
        .map(|s| nearest_site_distance([s.centroid_um[0] / 1000.0, s.centroid_um[1] / 1000.0, s.frame as f64 * dz], &sites))
        .collect()
}

#[test]
fn apposed_struts_touch_the_wall() {
    let spec = desk_spec(12, 3);
    let p = generate_phantom(&spec).unwrap().to_cartesian(DESK_SIZE).unwrap();
    let d = centroid_distances(&p, 0..12);
    assert!(d.len() >= 12 * spec.stent.struts_per_turn / 2);
    for v in d {
        assert!(v <= spec.stent.strut_radius_mm, "{v}");
    }
}

#[test]
fn malapposed_struts_sit_at_the_gap() {
    let mut spec = desk_spec(12, 4);
    spec.segments = vec![Segment { start: 0, end: 12, mode: Apposition::Malapposed { gap_mm: 0.4 } }];
    let p = generate_phantom(&spec).unwrap().to_cartesian(DESK_SIZE).unwrap();
    let d = centroid_distances(&p, 0..12);
    assert!(!d.is_empty());
    let r = spec.stent.strut_radius_mm;
    for v in d {
        assert!((v - 0.4).abs() <= r, "{v}");
    }
}

fn frame_of(z_um: f64, dz_um: f64) -> usize {
    (z_um / dz_um).round() as usize
}

#[test]
fn scripted_segments_are_recovered() {
    let spec = fidelity_spec(5);
    let p = generate_phantom(&spec).unwrap().to_cartesian(FIDELITY_CARTESIAN_SIZE).unwrap();
    let df = distance_field(&p.lumen).unwrap();
    let cfg = DccaConfig::default();
    let expected = expected_apposition(&spec);

    let points = color_stents(&p.stent, &df, &cfg).unwrap();
    assert_eq!(points.len(), p.stent.count());
    let mut hits = [(0usize, 0usize); 3];
    for (pos, &code) in points.positions_um.iter().zip(&points.codes) {
        let e = expected[frame_of(pos[2], spec.frame_pitch_um)];
        let (k, in_band) = match e.mode {
            Apposition::Apposed => (0, code >= 150.0),
            Apposition::Malapposed { .. } => (1, code <= 10.0),
            Apposition::Covered { .. } => (2, code <= 10.0),
        };
        hits[k].1 += 1;
        hits[k].0 += in_band as usize;
    }
    for (k, (ok, n)) in hits.iter().enumerate() {
        assert!(*n > 0);
        assert!(*ok as f64 >= 0.9 * *n as f64, "group {k}: {ok}/{n}");
    }

    let report = apposition_report(&p.stent, &p.lumen, &df, &cfg).unwrap();
    assert_eq!(report.segments.len(), 2);
    let pitch = spec.frame_pitch_um / 1000.0;
    let mal = &report.segments[0];
    assert_eq!(mal.class, AppositionClass::Malapposed);
    assert!((mal.length_mm - 9.0).abs() <= pitch + 1e-9);
    assert!(mal.start_frame.abs_diff(15) <= 1);
    let cov = &report.segments[1];
    assert_eq!(cov.class, AppositionClass::Covered);
    assert!((cov.length_mm - 4.0).abs() <= pitch + 1e-9);
    assert!(cov.start_frame.abs_diff(70) <= 1);
    let total: f64 = report.segments.iter().map(|s| s.length_mm).sum();
    assert!(total <= report.total_length_mm);
    for s in &report.struts {
        match s.class {
            AppositionClass::Malapposed => assert!(s.distance_mm > cfg.d_mm),
            AppositionClass::Covered => assert!(-s.distance_mm > cfg.d_mm),
            AppositionClass::Well => assert!(s.distance_mm.abs() <= cfg.d_mm),
        }
    }
}

#[test]
fn all_apposed_has_no_segments() {
    let spec = desk_spec(10, 8);
    let p = generate_phantom(&spec).unwrap().to_cartesian(DESK_SIZE).unwrap();
    let df = distance_field(&p.lumen).unwrap();
    let report = apposition_report(&p.stent, &p.lumen, &df, &DccaConfig::default()).unwrap();
    assert!(report.segments.is_empty());
    assert!(!report.struts.is_empty());
}

#[test]
fn per_strut_colouring_is_uniform_within_a_strut() {
    let spec = desk_spec(4, 2);
    let p = generate_phantom(&spec).unwrap().to_cartesian(DESK_SIZE).unwrap();
    let df = distance_field(&p.lumen).unwrap();
    let cfg = DccaConfig { per_strut_uniform: true, ..Default::default() };
    let points = color_stents(&p.stent, &df, &cfg).unwrap();
    assert_eq!(points.len(), p.stent.count());
    let mut start = 0;
    for s in extract_struts(&p.stent) {
        let codes = &points.codes[start..start + s.voxel_count];
        assert!(codes.iter().all(|&c| c == codes[0]));
        start += s.voxel_count;
    }
}

#[test]
fn empty_stent_gives_no_points() {
    let mut spec = desk_spec(3, 1);
    spec.stent.struts_per_turn = 0;
    let p = generate_phantom(&spec).unwrap().to_cartesian(DESK_SIZE).unwrap();
    let df = distance_field(&p.lumen).unwrap();
    assert!(color_stents(&p.stent, &df, &DccaConfig::default()).unwrap().is_empty());
}
