#![no_main]
use derlab::experiment::traces_from_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = traces_from_csv(data, "fuzz");
});
