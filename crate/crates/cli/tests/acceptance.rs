//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use dcca_cli::config::RunConfig;
use dcca_cli::pipeline;
use dcca_cli::stages::{LUMEN_PLY, METRICS_FILE, STENT_PLY};
use dcca_core::augment::{concat_pullback, window_volume};
use dcca_core::container::{label_stem, load_labels};
use dcca_core::dcca::{
    apposition_report, code_to_rgb, color_stents, distance_field, hue_code, lumen_mesh, lumen_ply_payload,
    AppositionClass, DccaConfig,
};
use dcca_core::metrics::{
    extract_struts, match_struts, overlap_counts, strut_metrics, voxel_metrics, StrutInstance, MATCH_RADIUS_UM,
};
use dcca_core::phantom::{desk_spec, expected_apposition, fidelity_spec, generate_phantom, Apposition, FIDELITY_CARTESIAN_SIZE};
use dcca_core::volume::linear_index;
use dcca_core::{CoordSystem, LabelVolume, Target, VoxelSpacing};
use dcca_nn::data::chunk_pair;
use dcca_nn::loss::{seg_loss_value, LossConfig};
use dcca_nn::net::{build_network, NetConfig, SegNet};
use dcca_nn::train::{soft_dice, train, TrainConfig};
use dcca_nn::{Graph, ParamId, Tensor};
use dcca_oracles::{all_pairs_signed_distance, boundary_scan, flood_fill_labels, optimal_match_count, SplitMix64};
use ply_rs::parser::Parser;
use ply_rs::ply::{DefaultElement, Property};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Check + 'a>);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn partition(struts: &[StrutInstance], dims: [usize; 3]) -> Vec<u32> {
    let mut out = vec![0u32; dims.iter().product()];
    for (k, s) in struts.iter().enumerate() {
        for &[x, y] in &s.voxels {
            out[linear_index(dims, x, y, s.frame)] = k as u32 + 1;
        }
    }
    out
}

fn paint_blob(mask: &mut [bool], dims: [usize; 3], cx: usize, cy: usize, z: usize, r: usize) {
    for y in cy.saturating_sub(r)..(cy + r + 1).min(dims[1]) {
        for x in cx.saturating_sub(r)..(cx + r + 1).min(dims[0]) {
            mask[linear_index(dims, x, y, z)] = true;
        }
    }
}

/// Ground-truth blobs and a perturbed prediction of them.
fn random_mask_pair(rng: &mut SplitMix64) -> (LabelVolume, LabelVolume) {
    let dims = [16 + rng.below(49), 16 + rng.below(49), 1 + rng.below(8)];
    let sp = VoxelSpacing::new(10.0, 10.0, 200.0).unwrap();
    let n = dims.iter().product();
    let (mut gt, mut pred) = (vec![false; n], vec![false; n]);
    for z in 0..dims[2] {
        for _ in 0..rng.below(5) {
            let (x, y, r) = (rng.below(dims[0]), rng.below(dims[1]), rng.below(3));
            paint_blob(&mut gt, dims, x, y, z, r);
            if rng.unit() < 0.8 {
                let jx = (x + rng.below(7)).saturating_sub(3).min(dims[0] - 1);
                let jy = (y + rng.below(7)).saturating_sub(3).min(dims[1] - 1);
                paint_blob(&mut pred, dims, jx, jy, z, rng.below(3));
            }
        }
        for _ in 0..rng.below(2) {
            paint_blob(&mut pred, dims, rng.below(dims[0]), rng.below(dims[1]), z, rng.below(2));
        }
    }
    let mk = |m| LabelVolume::new(dims, m, Target::Stent, sp, CoordSystem::Cartesian).unwrap();
    (mk(gt), mk(pred))
}

fn well_separated(pred: &[StrutInstance], gt: &[StrutInstance]) -> bool {
    pred.iter()
        .all(|p| gt.iter().filter(|g| g.frame == p.frame && p.distance_um(g) <= MATCH_RADIUS_UM).count() <= 1)
}

fn triples(s: &[StrutInstance]) -> Vec<(usize, f64, f64)> {
    s.iter().map(|s| (s.frame, s.centroid_um[0], s.centroid_um[1])).collect()
}

fn ratio(a: f64, b: f64) -> Option<f64> {
    (b > 0.0).then(|| a / b)
}

fn metric_oracles() -> Check {
    let mut rng = SplitMix64(2024);
    let mut separated = 0;
    for trial in 0..200 {
        let (gt, pred) = random_mask_pair(&mut rng);
        let dims = gt.dims();
        let (g, p) = (extract_struts(&gt), extract_struts(&pred));
        ensure!(partition(&g, dims) == flood_fill_labels(gt.mask(), dims), "trial {trial}: truth components differ");
        ensure!(partition(&p, dims) == flood_fill_labels(pred.mask(), dims), "trial {trial}: prediction components differ");
        let c = match_struts(&p, &g, MATCH_RADIUS_UM);
        ensure!(c.tp + c.fp == p.len() && c.tp + c.fn_ == g.len(), "trial {trial}: counts do not partition");
        if well_separated(&p, &g) {
            separated += 1;
            let best = optimal_match_count(&triples(&p), &triples(&g), MATCH_RADIUS_UM);
            ensure!(c.tp == best, "trial {trial}: {} matches, optimum {best}", c.tp);
        }
        let (tp, fp, fn_) = (c.tp as f64, c.fp as f64, c.fn_ as f64);
        let s = strut_metrics(&c);
        ensure!(
            s.precision == ratio(tp, tp + fp) && s.recall == ratio(tp, tp + fn_) && s.dice == ratio(2.0 * tp, 2.0 * tp + fp + fn_),
            "trial {trial}: strut scores {s:?}"
        );
        let o = overlap_counts(&pred, &gt).unwrap();
        let (mut vtp, mut vfp, mut vfn) = (0usize, 0usize, 0usize);
        for (&a, &b) in pred.mask().iter().zip(gt.mask()) {
            vtp += (a && b) as usize;
            vfp += (a && !b) as usize;
            vfn += (!a && b) as usize;
        }
        ensure!((o.tp, o.fp, o.fn_) == (vtp, vfp, vfn), "trial {trial}: voxel counts");
        let v = voxel_metrics(&pred, &gt).unwrap();
        let (vtp, vfp, vfn) = (vtp as f64, vfp as f64, vfn as f64);
        ensure!(
            v.precision == ratio(vtp, vtp + vfp) && v.recall == ratio(vtp, vtp + vfn) && v.dice == ratio(2.0 * vtp, 2.0 * vtp + vfp + vfn),
            "trial {trial}: voxel scores {v:?}"
        );
    }
    ensure!(separated >= 100, "only {separated} well-separated cases");
    Ok(format!("200 mask pairs, {separated} well separated"))
}

fn distance_exactness() -> Check {
    let mut rng = SplitMix64(77);
    let spacings = [[13.671875, 13.671875, 200.0], [15.0, 15.0, 200.0], [7.0, 11.0, 3.0], [1.0, 1.0, 1.0]];
    let mut checked = 0;
    let mut voxels = 0;
    while checked < 50 {
        let dims = [2 + rng.below(31), 2 + rng.below(31), 1 + rng.below(32)];
        let [dx, dy, dz] = spacings[rng.below(spacings.len())];
        let sp = VoxelSpacing::new(dx, dy, dz).unwrap();
        let density = 0.2 + 0.7 * rng.unit();
        let mask: Vec<bool> = (0..dims.iter().product::<usize>()).map(|_| rng.unit() < density).collect();
        if !boundary_scan(&mask, dims).contains(&true) {
            continue;
        }
        let lumen = LabelVolume::new(dims, mask, Target::Lumen, sp, CoordSystem::Cartesian).unwrap();
        let df = distance_field(&lumen).map_err(|e| e.to_string())?;
        let oracle = all_pairs_signed_distance(lumen.mask(), dims, sp.mm());
        for (i, (&a, &b)) in df.values_mm().iter().zip(&oracle).enumerate() {
            ensure!(a.to_bits() == b.to_bits(), "voxel {i} of {dims:?}: {a} vs oracle {b}");
        }
        voxels += oracle.len();
        checked += 1;
    }
    Ok(format!("50 volumes, {voxels} voxels bitwise equal"))
}

fn hue_endpoints() -> Check {
    let cfg = DccaConfig::default();
    for (d, want) in [(0.0, 180.0), (0.3, 0.0), (-0.3, 0.0), (0.15, 90.0), (-0.15, 90.0)] {
        let got = hue_code(d, &cfg);
        ensure!(got == want, "hue_code({d}) = {got}, expected {want}");
    }
    ensure!(code_to_rgb(0.0).unwrap() == [255, 0, 0], "code 0 is {:?}", code_to_rgb(0.0));
    ensure!(code_to_rgb(180.0).unwrap() == [0, 255, 0], "code 180 is {:?}", code_to_rgb(180.0));
    Ok("exact".into())
}

fn augmentation_integrity() -> Check {
    let p = generate_phantom(&desk_spec(6, 13)).unwrap();
    let v = &p.image;
    let [s, a, f] = v.dims();
    // A-lines appended frame by frame through the accessor, independent of the storage order
    let mut concat = Vec::with_capacity(s * a * f);
    for z in 0..f {
        for y in 0..a {
            for x in 0..s {
                concat.push(v.get(x, y, z));
            }
        }
    }
    let seq = concat_pullback(v).unwrap();
    ensure!(seq.data.len() == concat.len(), "concatenation length");
    let (same, labels) = window_volume(v, &[&p.stent, &p.lumen], 0).unwrap();
    ensure!(same.dims() == v.dims(), "offset 0 changed shape");
    ensure!(same.data().iter().zip(v.data()).all(|(x, y)| x.to_bits() == y.to_bits()), "offset 0 changed the image");
    ensure!(labels[0] == p.stent && labels[1] == p.lumen, "offset 0 changed the labels");
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let offset = rng.random_range(1..=seq.max_offset());
        let (w, wl) = window_volume(v, &[&p.stent], offset).unwrap();
        let frames = w.dims()[2];
        ensure!(frames == (a * f - offset) / a, "offset {offset}: {frames} frames");
        for k in 0..frames {
            let start = (offset + k * a) * s;
            for y in 0..a {
                for x in 0..s {
                    let want = concat[start + y * s + x];
                    let lwant = p.stent.mask()[start + y * s + x];
                    ensure!(w.get(x, y, k).to_bits() == want.to_bits(), "offset {offset} frame {k} sample ({x},{y})");
                    ensure!(wl[0].get(x, y, k) == lwant, "offset {offset} frame {k} label ({x},{y})");
                }
            }
        }
    }
    Ok("20 offsets bitwise, offset 0 identical".into())
}

fn loss_of(net: &SegNet, x: &Tensor, target: &Tensor) -> f64 {
    let mut g = Graph::new();
    let xi = g.input(x.clone());
    let z = net.forward(&mut g, xi).unwrap();
    seg_loss_value(g.value(z).data(), target.data(), &LossConfig::default())
}

fn network_contracts() -> Check {
    let net = build_network(&NetConfig { toy_scale: 32, ..Default::default() }, 1).unwrap();
    for hw in [64, 128] {
        for d in [4, 8, 32] {
            let out = net.predict(Tensor::filled([1, d, hw, hw], 0.25)).map_err(|e| e.to_string())?;
            ensure!(out.shape() == [1, d, hw, hw], "{d}x{hw}x{hw} gave {:?}", out.shape());
        }
    }

    let mut net = build_network(&NetConfig { toy_scale: 128, ..Default::default() }, 21).unwrap();
    let p = generate_phantom(&desk_spec(4, 11)).unwrap().to_cartesian(32).unwrap();
    let sample = chunk_pair(&p.image, &p.stent, 4).unwrap().remove(0);
    let (x, target) = (sample.image, sample.mask);
    let mut g = Graph::new();
    let xi = g.input(x.clone());
    let z = net.forward(&mut g, xi).unwrap();
    let l = g.seg_loss(z, target.clone(), LossConfig::default());
    let grads = g.backward(l);
    net.params_mut().zero_grad();
    g.accumulate_param_grads(&grads, net.params_mut());
    let ids: Vec<ParamId> = net.params().ids().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-3f32;
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let id = ids[rng.random_range(0..ids.len())];
        let k = rng.random_range(0..net.params().value(id).len());
        let analytic = net.params().grad(id).data()[k] as f64;
        let w0 = net.params().value(id).data()[k];
        net.params_mut().value_mut(id).data_mut()[k] = w0 + h;
        let up = loss_of(&net, &x, &target);
        net.params_mut().value_mut(id).data_mut()[k] = w0 - h;
        let down = loss_of(&net, &x, &target);
        net.params_mut().value_mut(id).data_mut()[k] = w0;
        let numeric = (up - down) / (2.0 * h as f64);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4);
        ensure!(rel <= 1e-2, "{}[{k}]: analytic {analytic}, numeric {numeric}", net.params().name(id));
        worst = worst.max(rel);
    }

    const OVERFIT_STEPS: usize = 1400;
    let p = generate_phantom(&desk_spec(16, 5)).unwrap().to_cartesian(96).unwrap();
    let samples = chunk_pair(&p.image, &p.stent, 4).unwrap();
    ensure!(samples.len() == 4, "{} chunks", samples.len());
    let cfg = TrainConfig {
        lr: 3e-3,
        chunk_depth: 4,
        epochs: OVERFIT_STEPS / samples.len(),
        ..Default::default()
    };
    let net = build_network(&NetConfig { toy_scale: 8, ..Default::default() }, 0).unwrap();
    let out = train(net, &samples, &[], &cfg, None).map_err(|e| e.to_string())?;
    let (mut pred, mut truth) = (Vec::new(), Vec::new());
    for s in &samples {
        pred.extend_from_slice(out.last.predict(s.image.clone()).unwrap().data());
        truth.extend_from_slice(s.mask.data());
    }
    let dice = soft_dice(&pred, &truth);
    ensure!(dice > 0.95, "soft Dice {dice:.4} after {OVERFIT_STEPS} steps");
    Ok(format!("shapes ok, worst gradient error {worst:.2e}, soft Dice {dice:.4} after {OVERFIT_STEPS} steps"))
}

fn pipeline_benchmark(run_dir: &Path) -> Check {
    let t = Instant::now();
    let outcome = pipeline::run(&RunConfig::default(), run_dir).map_err(|e| format!("{e:#}"))?;
    let minutes = t.elapsed().as_secs_f64() / 60.0;
    let m = outcome.metrics;
    let s = m.test.strut_scores.ok_or("no test struts")?;
    let (precision, dice) = (s.precision.unwrap_or(0.0), s.dice.unwrap_or(0.0));
    let lumen = m.test.lumen_dice.ok_or("no lumen scores")?.mean;
    let r1 = m.dim_round1.and_then(|d| d.strut_scores).and_then(|s| s.recall).ok_or("no round-1 dim recall")?;
    let r2 = m.dim_round2.and_then(|d| d.strut_scores).and_then(|s| s.recall).ok_or("no round-2 dim recall")?;
    let summary = format!(
        "strut precision {precision:.3}, dice {dice:.3}, lumen dice {lumen:.3}, dim recall {r1:.3} -> {r2:.3}, {minutes:.1} min"
    );
    ensure!(precision >= 0.90 && dice >= 0.90, "{summary}");
    ensure!(lumen >= 0.95, "{summary}");
    ensure!(r2 >= r1, "{summary}");
    ensure!(minutes <= 30.0, "{summary}");
    Ok(summary)
}

fn dcca_fidelity() -> Check {
    let spec = fidelity_spec(5);
    let p = generate_phantom(&spec).unwrap().to_cartesian(FIDELITY_CARTESIAN_SIZE).unwrap();
    let df = distance_field(&p.lumen).unwrap();
    let cfg = DccaConfig::default();
    let expected = expected_apposition(&spec);
    let points = color_stents(&p.stent, &df, &cfg).unwrap();
    let mut hits = [(0usize, 0usize); 3];
    for (pos, &code) in points.positions_um.iter().zip(&points.codes) {
        let e = expected[(pos[2] / spec.frame_pitch_um).round() as usize];
        let (k, in_band) = match e.mode {
            Apposition::Apposed => (0, code >= 150.0),
            Apposition::Malapposed { .. } | Apposition::Covered { .. } => {
                (if matches!(e.mode, Apposition::Malapposed { .. }) { 1 } else { 2 }, code <= 10.0)
            }
        };
        hits[k].1 += 1;
        hits[k].0 += in_band as usize;
    }
    for (k, (ok, n)) in hits.iter().enumerate() {
        ensure!(*n > 0 && *ok as f64 >= 0.9 * *n as f64, "group {k}: {ok}/{n} points in band");
    }
    let report = apposition_report(&p.stent, &p.lumen, &df, &cfg).unwrap();
    let pitch = spec.frame_pitch_um / 1000.0;
    ensure!(report.segments.len() == spec.segments.len(), "{} segments reported", report.segments.len());
    let mut lines = Vec::new();
    for (got, want) in report.segments.iter().zip(&spec.segments) {
        let class = match want.mode {
            Apposition::Malapposed { .. } => AppositionClass::Malapposed,
            Apposition::Covered { .. } => AppositionClass::Covered,
            Apposition::Apposed => AppositionClass::Well,
        };
        let length = (want.end - want.start) as f64 * pitch;
        ensure!(got.class == class, "expected {class:?}, got {:?}", got.class);
        ensure!((got.length_mm - length).abs() <= pitch + 1e-9, "{class:?}: {} mm vs {length} mm", got.length_mm);
        lines.push(format!("{class:?} {:.1} mm", got.length_mm));
    }
    let bands: Vec<String> = hits.iter().map(|(ok, n)| format!("{ok}/{n}")).collect();
    Ok(format!("{}; points in band {}", lines.join(", "), bands.join(" ")))
}

const TINY: [&str; 9] = [
    "synth.train_cases=2",
    "synth.test_cases=1",
    "synth.dim_cases=1",
    "stent.epochs=8",
    "lumen.epochs=2",
    "style.round2.epochs=1",
    "style.nst.size=16",
    "style.nst.iterations=5",
    "style.nst.max_regions=4",
];

fn tiny_run(dir: &Path) -> Result<(), String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dcca"));
    for s in TINY {
        cmd.args(["--set", s]);
    }
    let out = cmd
        .args(["--seed", "7", "pipeline", "--run-dir"])
        .arg(dir)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(out.status.success(), "exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    Ok(())
}

fn reproducibility(tmp: &Path) -> Check {
    let (a, b) = (tmp.join("repro_a"), tmp.join("repro_b"));
    tiny_run(&a)?;
    tiny_run(&b)?;
    let mut files = vec![Path::new("reports").join(METRICS_FILE)];
    for entry in std::fs::read_dir(a.join("dcca")).map_err(|e| e.to_string())? {
        let case = Path::new("dcca").join(entry.map_err(|e| e.to_string())?.file_name());
        files.push(case.join(STENT_PLY));
        files.push(case.join(LUMEN_PLY));
    }
    ensure!(files.len() >= 3, "no PLY files written");
    for f in &files {
        let x = std::fs::read(a.join(f)).map_err(|e| format!("{}: {e}", f.display()))?;
        let y = std::fs::read(b.join(f)).map_err(|e| format!("{}: {e}", f.display()))?;
        ensure!(x == y, "{} differs between runs", f.display());
    }
    Ok(format!("{} files byte-identical", files.len()))
}

fn vertex_bits(path: &Path) -> Result<Vec<[u32; 3]>, String> {
    let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let ply = Parser::<DefaultElement>::new()
        .read_ply(&mut std::io::Cursor::new(bytes))
        .map_err(|e| format!("{}: {e}", path.display()))?;
    let mut out = Vec::new();
    for e in ply.payload.get("vertex").map(Vec::as_slice).unwrap_or(&[]) {
        let mut v = [0u32; 3];
        for (k, axis) in ["x", "y", "z"].iter().enumerate() {
            match e.get(*axis) {
                Some(Property::Float(f)) => v[k] = f.to_bits(),
                other => return Err(format!("{}: {axis} is {other:?}", path.display())),
            }
        }
        out.push(v);
    }
    Ok(out)
}

fn ply_validity(run_dir: &Path) -> Check {
    let layout = pipeline::RunLayout { root: run_dir.to_path_buf() };
    let dcca_dir = run_dir.join("dcca");
    ensure!(dcca_dir.is_dir(), "the pipeline wrote no DccA output");
    let (mut files, mut vertices) = (0, 0);
    for entry in std::fs::read_dir(&dcca_dir).map_err(|e| e.to_string())? {
        let case = entry.map_err(|e| e.to_string())?.file_name().to_string_lossy().into_owned();
        let pred = layout.predictions("test").join(&case);
        let stent = load_labels(&label_stem(&pred, Target::Stent)).map_err(|e| e.to_string())?;
        let lumen = load_labels(&label_stem(&pred, Target::Lumen)).map_err(|e| e.to_string())?;
        let df = distance_field(&lumen).map_err(|e| e.to_string())?;
        let points = color_stents(&stent, &df, &DccaConfig::default()).map_err(|e| e.to_string())?;
        let (mesh_vertices, _) = lumen_ply_payload(&lumen_mesh(&lumen).map_err(|e| e.to_string())?);
        for (file, want) in [(STENT_PLY, points.positions_f32()), (LUMEN_PLY, mesh_vertices)] {
            let got = vertex_bits(&layout.dcca(&case).join(file))?;
            let want: Vec<[u32; 3]> = want.iter().map(|v| v.map(f32::to_bits)).collect();
            ensure!(got == want, "{case}/{file}: vertices differ from the exported geometry");
            files += 1;
            vertices += got.len();
        }
    }
    ensure!(files > 0, "no PLY files found");
    Ok(format!("{files} files, {vertices} vertices bitwise equal"))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let run_dir = tmp.path().join("benchmark");
    let criteria: Vec<Criterion> = vec![
        ("metric oracle equivalence", Box::new(metric_oracles)),
        ("distance-field exactness", Box::new(distance_exactness)),
        ("hue-coding endpoints", Box::new(hue_endpoints)),
        ("augmentation integrity", Box::new(augmentation_integrity)),
        ("network contracts", Box::new(network_contracts)),
        ("end-to-end phantom benchmark", Box::new(|| pipeline_benchmark(&run_dir))),
        ("DccA fidelity", Box::new(dcca_fidelity)),
        ("reproducibility", Box::new(|| reproducibility(tmp.path()))),
        ("PLY validity", Box::new(|| ply_validity(&run_dir))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {}: PASS  {name} ({secs:.1} s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL  {name} ({secs:.1} s): {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}
