#![no_main]

use aria_core::metrics::EvalReport;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(report) = EvalReport::from_json(text) {
            let json = report.to_json().expect("serializes");
            assert_eq!(EvalReport::from_json(&json).expect("reparses"), report);
        }
    }
});
