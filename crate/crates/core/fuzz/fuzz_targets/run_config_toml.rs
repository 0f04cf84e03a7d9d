#![no_main]
use libfuzzer_sys::fuzz_target;
use origami_reservoir::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(config) = RunConfig::from_toml(text) {
            let again = RunConfig::from_toml(&config.to_toml().expect("serializes")).expect("round trip");
            assert_eq!(again.seed, config.seed);
        }
    }
});
