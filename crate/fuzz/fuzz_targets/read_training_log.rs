#![no_main]

use libfuzzer_sys::fuzz_target;
use nli_lab::training::read_training_log;

fuzz_target!(|text: &str| {
    let _ = read_training_log(text);
});
