#![no_main]

use libfuzzer_sys::fuzz_target;
use nli_lab::tokenizer::Vocabulary;

fuzz_target!(|text: &str| {
    if let Ok(vocab) = Vocabulary::from_text(text) {
        let again = Vocabulary::from_text(&vocab.to_text()).expect("saved vocabulary reloads");
        assert_eq!(again.tokens(), vocab.tokens());
    }
});
