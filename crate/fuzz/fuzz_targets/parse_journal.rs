#![no_main]

use libfuzzer_sys::fuzz_target;
use nli_lab::hpo::parse_journal;

fuzz_target!(|text: &str| {
    let _ = parse_journal(text);
});
