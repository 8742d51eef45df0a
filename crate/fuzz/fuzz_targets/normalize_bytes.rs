#![no_main]

use libfuzzer_sys::fuzz_target;
use nli_lab::tokenizer::{normalize_bytes, normalize_text, NormalizationProfile};

fuzz_target!(|data: &[u8]| {
    for profile in [NormalizationProfile::CORPUS, NormalizationProfile::TOKENIZER] {
        if let Ok(once) = normalize_bytes(data, &profile) {
            assert_eq!(normalize_text(&once, &profile), once, "normalization is not idempotent");
        }
    }
});
