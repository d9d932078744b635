#![no_main]
use avfuse::metrics::parse_candidates;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let _ = parse_candidates(text);
});
