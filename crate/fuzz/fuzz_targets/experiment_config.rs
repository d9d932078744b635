#![no_main]
use avfuse::harness::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(cfg) = ExperimentConfig::from_json(text) {
        let again = ExperimentConfig::from_json(&cfg.to_json()).expect("written config parses");
        assert_eq!(again.to_json(), cfg.to_json());
    }
});
