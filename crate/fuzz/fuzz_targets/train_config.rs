#![no_main]

use libfuzzer_sys::fuzz_target;
use veinatn::train::TrainConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = TrainConfig::parse(text) {
            assert_eq!(TrainConfig::parse(&cfg.to_toml()).unwrap(), cfg);
        }
    }
});
