#![no_main]

use libfuzzer_sys::fuzz_target;
use nli_lab::corpus::parse_anercorp_str;

fuzz_target!(|text: &str| {
    if let Ok(parsed) = parse_anercorp_str(text, true) {
        assert!(parsed.sentences.iter().all(|s| s.is_iob_valid()));
    }
    if let Ok(strict) = parse_anercorp_str(text, false) {
        assert!(strict.sentences.iter().all(|s| s.is_iob_valid()));
        assert_eq!(strict.repairs, 0);
    }
});
