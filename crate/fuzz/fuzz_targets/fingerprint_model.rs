#![no_main]

use aria_core::model::FingerprintModel;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = FingerprintModel::from_bytes(data) {
        let bytes = model.to_bytes();
        let again = FingerprintModel::from_bytes(&bytes).expect("round trip");
        assert_eq!(again.to_bytes(), bytes);
    }
});
