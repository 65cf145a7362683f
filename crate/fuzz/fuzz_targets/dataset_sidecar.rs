#![no_main]

use libfuzzer_sys::fuzz_target;
use vinevi::models::DatasetSidecar;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = DatasetSidecar::from_json(text);
    }
});
