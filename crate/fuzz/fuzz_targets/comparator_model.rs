#![no_main]

use aria_core::model::ComparatorModel;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = ComparatorModel::from_bytes(data) {
        let bytes = model.to_bytes();
        assert_eq!(ComparatorModel::from_bytes(&bytes).expect("round trip").to_bytes(), bytes);
    }
});
