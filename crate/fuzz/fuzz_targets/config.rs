#![no_main]
use derlab::experiment::TrainConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(cfg) = TrainConfig::from_toml_str(text, "fuzz") {
        let again = TrainConfig::from_toml_str(&cfg.to_toml(), "fuzz").expect("own output parses");
        assert_eq!(again.to_toml(), cfg.to_toml());
    }
});
