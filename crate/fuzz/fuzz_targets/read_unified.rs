#![no_main]

use libfuzzer_sys::fuzz_target;
use nli_lab::corpus::{read_unified_str, write_unified_string};

fuzz_target!(|text: &str| {
    if let Ok(examples) = read_unified_str(text) {
        let again = read_unified_str(&write_unified_string(&examples)).expect("written corpus reads back");
        assert_eq!(again, examples);
    }
});
