#![no_main]
use avfuse::textproc::Vocabulary;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(v) = Vocabulary::from_text(text) {
        let again = Vocabulary::from_text(&v.to_text()).expect("written vocabulary parses");
        assert_eq!(again.words(), v.words());
    }
});
