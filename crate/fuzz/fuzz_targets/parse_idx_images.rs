#![no_main]

use libfuzzer_sys::fuzz_target;
use webfed_core::data::parse_idx_images;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = parse_idx_images(data) {
        assert!(t.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
});
