#![no_main]

use dcca_core::container::{decode_labels, decode_volume, encode_labels, encode_volume, Metadata};
use libfuzzer_sys::fuzz_target;

// Input: sidecar text, a NUL byte, then the raw payload.
fuzz_target!(|data: &[u8]| {
    let Some(split) = data.iter().position(|&b| b == 0) else {
        return;
    };
    let Ok(text) = std::str::from_utf8(&data[..split]) else {
        return;
    };
    let Ok(meta) = Metadata::parse(text) else {
        return;
    };
    let payload = &data[split + 1..];
    if let Ok(v) = decode_volume(&meta, payload) {
        assert!(v.data().iter().all(|x| x.is_finite()));
        if !meta.normalize && meta.scalar_type == dcca_core::container::ScalarType::F32 {
            assert_eq!(encode_volume(&v), payload);
        }
    }
    if let Ok(l) = decode_labels(&meta, payload) {
        assert_eq!(encode_labels(&l).len(), payload.len());
    }
});
