#![no_main]
use avfuse::harness::SweepResult;
use avfuse::metrics::MetricReport;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(r) = MetricReport::from_json(text) {
        let _ = r.to_csv();
    }
    if let Ok(s) = SweepResult::from_json(text) {
        let _ = s.to_csv();
    }
});
