#![no_main]

use dcca_cli::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = toml::from_str::<RunConfig>(text) {
        if cfg.validate().is_ok() {
            let back: RunConfig = toml::from_str(&cfg.to_toml()).expect("serialized config parses");
            assert_eq!(back.hash(), cfg.hash());
        }
    }
    let _ = dcca_nn::checkpoint::parse_config_toml(text);
    let _ = dcca_nn::checkpoint::parse_log_csv(text);
});
