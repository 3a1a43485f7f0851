#![no_main]
use derlab::data::Dataset;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let _ = Dataset::meta_from_toml(text, "fuzz");
});
