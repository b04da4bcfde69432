#![no_main]

use libfuzzer_sys::fuzz_target;

use mosafe_core::risk::RiskSpec;

fuzz_target!(|data: &[u8]| {
    if let Ok(spec) = serde_json::from_slice::<RiskSpec>(data) {
        if let Ok(report) = spec.evaluate() {
            assert!(report.aggregate.value >= 0.0);
        }
    }
});
