#![no_main]
use libfuzzer_sys::fuzz_target;
use origami_reservoir::reservoir::ReservoirTrace;

fuzz_target!(|data: &[u8]| {
    if let Ok(trace) = ReservoirTrace::read_csv(data) {
        let again = ReservoirTrace::read_csv(trace.to_csv_string().as_bytes()).expect("round trip");
        assert_eq!(again.len(), trace.len());
    }
});
