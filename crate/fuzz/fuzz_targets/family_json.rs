#![no_main]

use libfuzzer_sys::fuzz_target;
use vinevi::DVineFamily;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(family) = DVineFamily::from_json(text) {
            let back = DVineFamily::from_json(&family.to_json()).expect("serialized family parses");
            assert_eq!(back.dim(), family.dim());
            let _ = family.implied_correlation();
        }
    }
});
