#![no_main]

use libfuzzer_sys::fuzz_target;
use webfed_core::proto::{decode_weights, encode_weights};

fuzz_target!(|data: &[u8]| {
    if let Ok(w) = decode_weights(data) {
        let text = encode_weights(&w).expect("decoded weights re-encode");
        assert!(decode_weights(text.as_bytes()).unwrap().bit_eq(&w));
    }
});
