#![no_main]

use libfuzzer_sys::fuzz_target;
use nli_lab::tokenizer::{encode_pair, train_vocab};

fuzz_target!(|input: (u8, &str)| {
    let (len, text) = input;
    let max_len = 5 + len as usize % 60;
    let (premise, hypothesis) = text.split_once('\t').unwrap_or((text, ""));
    let lines: Vec<String> = text.lines().map(str::to_string).collect();
    let Ok(vocab) = train_vocab(&lines, 200, 1) else { return };
    if let Ok(pair) = encode_pair(premise, hypothesis, &vocab, max_len) {
        assert_eq!(pair.token_ids.len(), max_len);
        assert!(pair.token_ids.iter().all(|&id| (id as usize) < vocab.len()));
    }
});
