use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dcca_cli::manifest::{self, MANIFEST_FILE};
use dcca_cli::{EXIT_DATA, EXIT_NUMERIC, EXIT_USAGE};
use dcca_core::container::load_volume;
use dcca_nn::checkpoint::{decode_params, encode_params};
use image::{ImageBuffer, ImageFormat, Luma};

const TINY: [&str; 8] = [
    "synth.train_cases=1",
    "synth.val_cases=0",
    "synth.test_cases=1",
    "synth.dim_cases=0",
    "synth.frames=5",
    "infer.cartesian_size=32",
    "stent.epochs=1",
    "lumen.epochs=1",
];

fn dcca(args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dcca"));
    for s in TINY {
        cmd.args(["--set", s]);
    }
    cmd.args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn ok(out: Output) -> Output {
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn synth(root: &Path) -> PathBuf {
    let data = root.join("data");
    ok(dcca(&["synth", "--out", p(&data)]));
    data
}

#[test]
fn help_and_version_succeed() {
    assert_eq!(code(&dcca(&["--help"])), 0);
    assert_eq!(code(&dcca(&["--version"])), 0);
}

#[test]
fn usage_errors_exit_with_one() {
    let out = dcca(&["synth", "--bogus"]);
    assert_eq!(code(&out), EXIT_USAGE);
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(code(&dcca(&[])), EXIT_USAGE);
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path());
    assert_eq!(code(&dcca(&["--set", "stent.epochs=0", "synth", "--out", out])), EXIT_USAGE);
    assert_eq!(code(&dcca(&["--set", "nope.x=1", "synth", "--out", out])), EXIT_USAGE);
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "seed = [").unwrap();
    assert_eq!(code(&dcca(&["--config", p(&cfg), "synth", "--out", out])), EXIT_USAGE);
    assert!(!dir.path().join(MANIFEST_FILE).exists());
}

#[test]
fn data_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing");
    assert_eq!(code(&dcca(&["augment", "--input", p(&missing), "--out", p(dir.path())])), EXIT_DATA);
    let junk = dir.path().join("junk.meta");
    fs::write(&junk, "not a container").unwrap();
    fs::write(dir.path().join("junk.raw"), [0u8; 4]).unwrap();
    let out = dcca(&["augment", "--input", p(&junk), "--out", p(&dir.path().join("aug"))]);
    assert_eq!(code(&out), EXIT_DATA);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn diverging_weights_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let train = data.join("train");
    let ckpt = dir.path().join("ckpt");
    ok(dcca(&["train", "--target", "stent", "--data", p(&train), "--out", p(&ckpt)]));
    let params = ckpt.join("params.bin");
    let mut store = decode_params(&fs::read(&params).unwrap()).unwrap();
    let id = store.ids().next().unwrap();
    store.value_mut(id).data_mut().fill(f32::NAN);
    fs::write(&params, encode_params(&store)).unwrap();
    let out = dcca(&["train", "--target", "stent", "--data", p(&train), "--init", p(&ckpt), "--out", p(&dir.path().join("again"))]);
    assert_eq!(code(&out), EXIT_NUMERIC, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite"));
}

#[test]
fn single_stages_chain_and_record_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = synth(root);
    let m = manifest::load(&data).unwrap();
    assert_eq!(m.command, "synth");
    assert_eq!(m.stages.len(), 1);
    assert!(m.outputs.iter().any(|o| o.starts_with("train")));
    assert_eq!(m.config_hash.len(), 64);

    let aug = root.join("aug");
    ok(dcca(&["augment", "--input", p(&data.join("train")), "--out", p(&aug)]));
    assert!(!manifest::load(&aug).unwrap().outputs.is_empty());

    let (stent, lumen) = (root.join("stent"), root.join("lumen"));
    for (target, out) in [("stent", &stent), ("lumen", &lumen)] {
        ok(dcca(&["train", "--target", target, "--data", p(&data.join("train")), "--data", p(&aug), "--out", p(out)]));
        let m = manifest::load(out).unwrap();
        assert!(m.outputs.iter().any(|o| o.ends_with("params.bin")));
        assert!(m.inputs.iter().all(|i| i.is_absolute()));
    }

    let pred = root.join("pred");
    let test = data.join("test");
    for (target, ckpt) in [("stent", &stent), ("lumen", &lumen)] {
        ok(dcca(&["infer", "--checkpoint", p(ckpt), "--target", target, "--input", p(&test), "--stride", "2", "--out", p(&pred)]));
    }
    assert_eq!(manifest::load(&pred).unwrap().command, "infer");

    let report = root.join("report");
    ok(dcca(&["eval", "--truth", p(&test), "--predictions", p(&pred), "--out", p(&report)]));
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(report.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["cases"].as_array().is_some_and(|c| c.len() == 1));

    let out = root.join("dcca");
    ok(dcca(&["dcca", "--case", p(&pred.join("case_000")), "--out", p(&out)]));
    for f in ["apposition.json", "stent.ply", "lumen.ply"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert_eq!(manifest::load(&out).unwrap().stages[0].outputs.len(), 3);
    assert_eq!(code(&dcca(&["infer", "--checkpoint", p(&stent), "--target", "stent", "--input", p(&test), "--stride", "0", "--out", p(&pred)])), EXIT_USAGE);
}

fn png(v: u8) -> Vec<u8> {
    let img = ImageBuffer::<Luma<u8>, _>::from_raw(4, 3, vec![v; 12]).unwrap();
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).unwrap();
    out.into_inner()
}

#[test]
fn ingest_stacks_png_frames() {
    let dir = tempfile::tempdir().unwrap();
    let frames = dir.path().join("frames");
    fs::create_dir(&frames).unwrap();
    for i in 0..3 {
        fs::write(frames.join(format!("frame_{i:05}.png")), png(50 * i as u8)).unwrap();
    }
    let out = dir.path().join("out");
    ok(dcca(&[
        "ingest", "--frames", p(&frames), "--out", p(&out), "--name", "scan", "--dx-um", "10", "--dy-um", "10", "--dz-um", "200",
    ]));
    let v = load_volume(&out.join("scan")).unwrap().volume;
    assert_eq!(v.dims(), [4, 3, 3]);
    assert_eq!(v.get(0, 0, 2), 100.0 / 255.0);
    assert_eq!(manifest::load(&out).unwrap().inputs.len(), 3);
    let bad = dcca(&["ingest", "--frames", p(&frames), "--out", p(&out), "--dx-um", "0", "--dy-um", "1", "--dz-um", "1"]);
    assert_eq!(code(&bad), EXIT_USAGE);
}
