#![no_main]
use derlab::network::Parameters;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(p) = Parameters::from_checkpoint_str(text, "fuzz") {
        let written = p.to_checkpoint_string();
        let again = Parameters::from_checkpoint_str(&written, "fuzz").expect("own output parses");
        assert_eq!(again.to_checkpoint_string(), written);
    }
});
