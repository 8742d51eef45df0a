#![no_main]

use libfuzzer_sys::fuzz_target;
use nli_lab_cli::RunConfig;

fuzz_target!(|text: &str| {
    if let Ok(cfg) = toml::from_str::<RunConfig>(text) {
        let _ = cfg.validate();
    }
});
