#![no_main]

use libfuzzer_sys::fuzz_target;
use vinevi::models::parse_dataset_csv;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_dataset_csv(text);
    }
});
