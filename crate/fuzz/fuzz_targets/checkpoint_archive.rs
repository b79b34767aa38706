#![no_main]

use dcca_nn::checkpoint::{decode_params, encode_params};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(store) = decode_params(data) {
        assert_eq!(encode_params(&store), data);
    }
});
