//! Generators for every message type, and the malformed-frame corpus.

use std::path::Path;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uuid::Uuid;
use webfed_core::ldp::PrivacyParams;
use webfed_core::nn::{ModelSpec, WeightsBundle};
use webfed_core::proto::{decode, ErrorClass, FedMessage, HyperParams, TaskConfig};

/// Lenet-shaped bundle of arbitrary finite f32 bit patterns.
pub fn bundle(seed: u64) -> WeightsBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = WeightsBundle::zeros(ModelSpec::LenetMnistV1);
    for v in w.values_mut() {
        *v = loop {
            let x = f32::from_bits(rng.gen());
            if x.is_finite() {
                break x;
            }
        };
    }
    w
}

pub fn task() -> impl Strategy<Value = TaskConfig> {
    (
        0.0f32..10.0,
        1u32..20,
        1u32..1024,
        proptest::option::of(1e-3f64..100.0),
        1e-3f64..10.0,
        any::<u32>(),
        1u32..1000,
    )
        .prop_map(|(eta, local_epochs, batch_size, epsilon, clip, rounds_total, m)| TaskConfig {
            hyper: HyperParams {
                eta,
                local_epochs,
                batch_size,
            },
            privacy: PrivacyParams { epsilon, clip },
            rounds_total,
            clients_per_round: m,
            ..TaskConfig::default()
        })
}

pub fn message() -> impl Strategy<Value = FedMessage> {
    let id = any::<u128>().prop_map(Uuid::from_u128);
    prop_oneof![
        (id.clone(), any::<u64>()).prop_map(|(client_id, num_samples)| FedMessage::Register {
            client_id,
            num_samples
        }),
        (any::<u32>(), task()).prop_map(|(client_index, task)| FedMessage::RegisterAck {
            client_index,
            task
        }),
        (any::<u32>(), any::<bool>(), any::<u64>()).prop_map(|(round, selected, s)| {
            FedMessage::GlobalModel {
                round,
                selected,
                weights: bundle(s),
            }
        }),
        (any::<u32>(), id, any::<u64>(), any::<u64>()).prop_map(|(round, client_id, n, s)| {
            FedMessage::LocalUpdate {
                round,
                client_id,
                num_samples: n,
                weights: bundle(s),
            }
        }),
        (any::<u32>(), 0.0f32..=1.0, proptest::num::f32::NORMAL | proptest::num::f32::ZERO)
            .prop_map(|(round, accuracy, loss)| FedMessage::RoundMetrics {
                round,
                accuracy,
                loss
            }),
        Just(FedMessage::Shutdown),
    ]
}

/// Equality that compares weights bit for bit, so -0.0 and subnormals count.
pub fn same(a: &FedMessage, b: &FedMessage) -> bool {
    match (a, b) {
        (
            FedMessage::GlobalModel {
                round: r1,
                selected: s1,
                weights: w1,
            },
            FedMessage::GlobalModel {
                round: r2,
                selected: s2,
                weights: w2,
            },
        ) => r1 == r2 && s1 == s2 && w1.bit_eq(w2),
        (
            FedMessage::LocalUpdate {
                round: r1,
                client_id: c1,
                num_samples: n1,
                weights: w1,
            },
            FedMessage::LocalUpdate {
                round: r2,
                client_id: c2,
                num_samples: n2,
                weights: w2,
            },
        ) => r1 == r2 && c1 == c2 && n1 == n2 && w1.bit_eq(w2),
        (
            FedMessage::RoundMetrics {
                round: r1,
                accuracy: a1,
                loss: l1,
            },
            FedMessage::RoundMetrics {
                round: r2,
                accuracy: a2,
                loss: l2,
            },
        ) => r1 == r2 && a1.to_bits() == a2.to_bits() && l1.to_bits() == l2.to_bits(),
        _ => a == b,
    }
}

/// Decodes every frame listed in `dir/expected.txt` and compares the error
/// class and field. Returns the number of frames checked, or the first mismatch.
pub fn check_bad_frames(dir: &Path) -> Result<usize, String> {
    let manifest = std::fs::read_to_string(dir.join("expected.txt")).map_err(|e| e.to_string())?;
    let mut seen = 0;
    for line in manifest.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [file, class, field] = parts[..] else {
            return Err(format!("bad manifest line {line:?}"));
        };
        let frame = std::fs::read(dir.join(file)).map_err(|e| format!("{file}: {e}"))?;
        let Err(err) = decode(&frame) else {
            return Err(format!("{file}: decoded without error"));
        };
        let want = match class {
            "parse" => ErrorClass::Parse,
            "protocol" => ErrorClass::Protocol,
            "schema" => ErrorClass::Schema,
            "codec" => ErrorClass::Codec,
            other => return Err(format!("unknown class {other}")),
        };
        if err.class() != want {
            return Err(format!("{file}: want {class}, got {err}"));
        }
        let want_field = (field != "-").then_some(field);
        if err.field() != want_field {
            return Err(format!("{file}: want field {field}, got {err}"));
        }
        seen += 1;
    }
    Ok(seen)
}
