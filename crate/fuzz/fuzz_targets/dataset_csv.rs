#![no_main]
use derlab::data::Dataset;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = Dataset::samples_from_csv(data, "fuzz");
});
