#![no_main]

use aria_core::retrieval::VectorIndex;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(index) = VectorIndex::from_bytes(data) {
        if index.dim() > 0 && index.dim() <= 4096 {
            let mut query = vec![0.0f32; index.dim()];
            query[0] = 1.0;
            let hits = index.search(&query, 5, 4).expect("search on a decoded index");
            assert!(hits.len() <= 5.min(index.len()));
        }
    }
});
