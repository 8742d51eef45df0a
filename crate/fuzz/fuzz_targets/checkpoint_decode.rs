#![no_main]

use libfuzzer_sys::fuzz_target;
use nli_lab::model::Model;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = Model::from_checkpoint_bytes(data) {
        let bytes = model.to_checkpoint_bytes();
        let again = Model::from_checkpoint_bytes(&bytes).expect("re-encoded checkpoint decodes");
        assert_eq!(again.to_checkpoint_bytes(), bytes);
    }
});
