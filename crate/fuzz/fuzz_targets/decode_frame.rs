#![no_main]

use libfuzzer_sys::fuzz_target;
use webfed_core::proto::{decode, encode};

fuzz_target!(|data: &[u8]| {
    if let Ok(msg) = decode(data) {
        // Anything accepted must re-encode, and decode to the same frame again.
        let text = encode(&msg).expect("decoded message re-encodes");
        let again = decode(text.as_bytes()).expect("re-encoded frame decodes");
        assert_eq!(encode(&again).unwrap(), text);
    }
});
