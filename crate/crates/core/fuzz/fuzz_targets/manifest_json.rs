#![no_main]
use libfuzzer_sys::fuzz_target;
use origami_reservoir::config::RunManifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = RunManifest::from_json(text) {
            RunManifest::from_json(&m.to_json()).expect("round trip");
        }
    }
});
