//! Wire codec: randomized round trips and the malformed-frame corpus.

#[path = "oracle/frames.rs"]
mod frames;

use std::path::Path;

use frames::{bundle, check_bad_frames, message, same};
use proptest::prelude::*;
use uuid::Uuid;
use webfed_core::proto::{decode, encode, ErrorClass, FedMessage};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1200))]

    #[test]
    fn round_trip_is_identity(msg in message()) {
        let text = encode(&msg).unwrap();
        let back = decode(text.as_bytes()).unwrap();
        prop_assert!(same(&msg, &back), "{} did not survive", msg.type_name());
        // Re-encoding what was received reproduces the frame byte for byte.
        prop_assert_eq!(encode(&back).unwrap(), text);
    }

    #[test]
    fn decode_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
        let _ = decode(&bytes);
    }
}

#[test]
fn non_finite_weights_are_refused_at_encode() {
    for bad in [f32::NAN, f32::INFINITY, f32::NEG_INFINITY] {
        let mut w = bundle(1);
        *w.values_mut().nth(4000).unwrap() = bad;
        let err = encode(&FedMessage::LocalUpdate {
            round: 1,
            client_id: Uuid::nil(),
            num_samples: 1,
            weights: w,
        })
        .unwrap_err();
        assert_eq!(err.class(), ErrorClass::Codec);
    }
}

#[test]
fn malformed_corpus_yields_expected_classes() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/bad_frames");
    assert_eq!(check_bad_frames(&dir), Ok(12));
}

#[test]
fn metrics_beyond_f32_range_are_schema_errors() {
    let frame = br#"{"type":"round_metrics","round":4,"accuracy":0.5,"loss":1e99}"#;
    let err = decode(frame).unwrap_err();
    assert_eq!((err.class(), err.field()), (ErrorClass::Schema, Some("loss")));

    let err = encode(&FedMessage::RoundMetrics {
        round: 1,
        accuracy: 0.5,
        loss: f32::INFINITY,
    })
    .unwrap_err();
    assert_eq!((err.class(), err.field()), (ErrorClass::Codec, Some("loss")));
}
