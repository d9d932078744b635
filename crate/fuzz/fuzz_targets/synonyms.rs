#![no_main]
use avfuse::metrics::SynonymTable;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let _ = SynonymTable::parse(text);
});
