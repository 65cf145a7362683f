#![no_main]

use libfuzzer_sys::fuzz_target;
use vinevi_cli::ExperimentSpec;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(spec) = ExperimentSpec::from_json(text) {
            let _ = spec.validate();
            let _ = spec.resolved();
        }
    }
});
