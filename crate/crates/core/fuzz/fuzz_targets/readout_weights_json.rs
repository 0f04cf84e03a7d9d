#![no_main]
use libfuzzer_sys::fuzz_target;
use origami_reservoir::reservoir::ReadoutWeights;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(w) = ReadoutWeights::from_json(text) {
            let mut out = vec![0.0; w.n_channels()];
            let sensors = vec![0.0; w.sensor_hinges.len()];
            w.apply(&sensors, &mut out);
        }
    }
});
