#![no_main]

use libfuzzer_sys::fuzz_target;
use webfed_core::data::{parse_idx, to_idx_bytes};

// First two bytes give the length of the image part; the rest are labels.
fuzz_target!(|data: &[u8]| {
    if data.len() < 2 {
        return;
    }
    let split = (u16::from_le_bytes([data[0], data[1]]) as usize).min(data.len() - 2);
    let (images, labels) = data[2..].split_at(split);
    if let Ok(ds) = parse_idx(images, labels) {
        assert_eq!(to_idx_bytes(&ds), (images.to_vec(), labels.to_vec()));
    }
});
