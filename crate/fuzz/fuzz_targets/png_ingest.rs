#![no_main]

use dcca_cli::ingest::decode_png_frame;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(p) = decode_png_frame(data) {
        assert_eq!(p.data.len(), p.nx * p.ny);
        assert!(p.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }
});
