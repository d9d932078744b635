#![no_main]
use avfuse::metrics::parse_spice;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let _ = parse_spice(text);
});
