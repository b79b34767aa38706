#![no_main]

use dcca_core::container::Metadata;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(meta) = Metadata::parse(text) {
            let again = Metadata::parse(&meta.to_text()).expect("serialized metadata parses");
            assert_eq!(again, meta);
            let _ = meta.payload_len();
        }
    }
});
