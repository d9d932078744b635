#![no_main]
use avfuse::data::FeatureSequence;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(seq) = FeatureSequence::from_bytes("clip", data) {
        let bytes = seq.to_bytes();
        let again = FeatureSequence::from_bytes("clip", &bytes).expect("encoded sequence parses");
        assert_eq!(again.to_bytes(), bytes);
    }
});
