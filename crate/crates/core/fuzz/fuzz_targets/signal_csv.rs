#![no_main]
use libfuzzer_sys::fuzz_target;
use origami_reservoir::tasks::Signal;

fuzz_target!(|data: &[u8]| {
    if let Ok(signal) = Signal::read_csv(data) {
        let mut buf = Vec::new();
        signal.write_csv(&mut buf).expect("writes");
        Signal::read_csv(buf.as_slice()).expect("round trip");
    }
});
