#![no_main]

use aria_core::io::{decode_ppm, encode_ppm};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(image) = decode_ppm(data) {
        assert!(image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let bytes = encode_ppm(&image).expect("decoded image encodes");
        assert_eq!(decode_ppm(&bytes).expect("re-decodes"), image);
    }
});
