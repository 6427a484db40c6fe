#![no_main]

use aria_core::model::BinaryHash;
use aria_core::retrieval::HashIndex;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(index) = HashIndex::from_bytes(data) {
        let bytes = index.to_bytes();
        assert_eq!(HashIndex::from_bytes(&bytes).expect("round trip").to_bytes(), bytes);
        if index.bits() <= 4096 {
            let query = BinaryHash { bits: vec![true; index.bits()] };
            let _ = index.search(&query, 3);
        }
    }
});
