#![no_main]

use libfuzzer_sys::fuzz_target;
use nli_lab::corpus::{ingest_reader, IngestOptions, Source};

fuzz_target!(|data: &[u8]| {
    if let Ok(report) = ingest_reader(data, Source::SnliAr, &IngestOptions::default()) {
        assert!(report.examples.len() + report.dropped <= report.rows);
    }
});
