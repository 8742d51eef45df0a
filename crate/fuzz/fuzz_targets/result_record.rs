#![no_main]

use libfuzzer_sys::fuzz_target;
use nli_lab::eval::{render_report, ResultRecord};

fuzz_target!(|data: &[u8]| {
    if let Ok(record) = serde_json::from_slice::<ResultRecord>(data) {
        let text = serde_json::to_string(&record).unwrap();
        assert_eq!(serde_json::from_str::<ResultRecord>(&text).unwrap(), record);
        let _ = render_report(&[record]);
    }
});
