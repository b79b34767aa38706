use std::fs;
use std::path::PathBuf;

use dcca_cli::config::RunConfig;
use dcca_cli::ingest::decode_png_frame;
use dcca_core::container::{decode_labels, decode_volume, Metadata};
use dcca_nn::checkpoint::{decode_params, encode_params, parse_config_toml, parse_log_csv};

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn text(bytes: &[u8]) -> &str {
    std::str::from_utf8(bytes).unwrap()
}

#[test]
fn meta_seeds_parse() {
    for (name, bytes) in seeds("meta_sidecar") {
        Metadata::parse(text(&bytes)).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn raw_payload_seeds_decode() {
    for (name, bytes) in seeds("raw_payload") {
        let split = bytes.iter().position(|&b| b == 0).expect("NUL separator");
        let meta = Metadata::parse(text(&bytes[..split])).unwrap();
        let payload = &bytes[split + 1..];
        assert!(decode_volume(&meta, payload).is_ok() || decode_labels(&meta, payload).is_ok(), "{name}");
    }
}

#[test]
fn config_seeds_parse() {
    for (name, bytes) in seeds("config_toml") {
        let t = text(&bytes);
        let parsed = toml::from_str::<RunConfig>(t).is_ok() || parse_config_toml(t).is_ok() || parse_log_csv(t).is_ok();
        assert!(parsed, "{name}");
    }
}

#[test]
fn checkpoint_seeds_round_trip() {
    for (name, bytes) in seeds("checkpoint_archive") {
        let store = decode_params(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(encode_params(&store), bytes, "{name}");
    }
}

#[test]
fn png_seeds_decode() {
    for (name, bytes) in seeds("png_ingest") {
        decode_png_frame(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}
