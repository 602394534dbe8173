//! Partitioning, evaluation and local-training properties.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use uuid::Uuid;
use webfed_core::client::{Adoption, ClientState};
use webfed_core::data::{partition, synth_dataset, ClientDataset, DataError, PartitionPlan, Strategy};
use webfed_core::nn::{self, init_weights, ModelSpec, CLASSES};
use webfed_core::proto::{HyperParams, TaskConfig};

fn sample_key(img: &[f32], label: u8) -> u64 {
    let mut h = DefaultHasher::new();
    label.hash(&mut h);
    for v in img {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

fn keys(ds: &ClientDataset) -> Vec<u64> {
    ds.samples().map(|(x, y)| sample_key(x, y)).collect()
}

#[test]
fn partition_is_a_true_partition() {
    for n in [10usize, 37, 120] {
        let ds = synth_dataset(n, 10, n as u64).unwrap();
        let mut source = keys(&ds);
        source.sort_unstable();
        for k in [1, 2, 3, 7, n as u32] {
            for strategy in [Strategy::Iid, Strategy::LabelSorted] {
                for seed in [0u64, 9] {
                    let plan = PartitionPlan {
                        num_clients: k,
                        seed,
                        strategy,
                    };
                    let shards = partition(&ds, &plan).unwrap();
                    assert_eq!(shards.len(), k as usize);
                    let sizes: Vec<usize> = shards.iter().map(ClientDataset::len).collect();
                    assert_eq!(sizes, plan.shard_sizes(n));
                    assert!(sizes.windows(2).all(|w| w[0] >= w[1] && w[0] - w[1] <= 1));
                    let mut union: Vec<u64> = shards.iter().flat_map(keys).collect();
                    union.sort_unstable();
                    assert_eq!(union, source, "n {n} k {k} {strategy:?}");
                }
            }
        }
    }
}

#[test]
fn partition_is_deterministic_in_seed() {
    let ds = synth_dataset(50, 10, 1).unwrap();
    let plan = |seed| PartitionPlan {
        num_clients: 4,
        seed,
        strategy: Strategy::Iid,
    };
    assert_eq!(partition(&ds, &plan(3)).unwrap(), partition(&ds, &plan(3)).unwrap());
    assert_ne!(partition(&ds, &plan(3)).unwrap(), partition(&ds, &plan(4)).unwrap());
}

#[test]
fn label_sorted_shards_are_ordered() {
    let ds = synth_dataset(40, 10, 1).unwrap();
    let plan = PartitionPlan {
        num_clients: 5,
        seed: 0,
        strategy: Strategy::LabelSorted,
    };
    let labels: Vec<u8> = partition(&ds, &plan)
        .unwrap()
        .iter()
        .flat_map(|s| s.labels().to_vec())
        .collect();
    assert!(labels.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn too_many_clients_is_config_error() {
    let ds = synth_dataset(10, 10, 1).unwrap();
    let plan = PartitionPlan {
        num_clients: 11,
        seed: 0,
        strategy: Strategy::Iid,
    };
    assert!(matches!(partition(&ds, &plan), Err(DataError::Config(_))));
}

#[test]
fn evaluation_matches_recount_from_logits() {
    let ds = synth_dataset(50, 10, 3).unwrap();
    let w = init_weights(ModelSpec::LenetMnistV1, 8);
    let eval = nn::evaluate(&w, &ds).unwrap();
    let (x, _) = ds.to_batch();
    let logits = nn::forward(&w, &x).unwrap();
    let mut correct = 0;
    let mut loss = 0.0f64;
    for (row, &label) in logits.data().chunks_exact(CLASSES).zip(ds.labels()) {
        let best = (0..CLASSES).fold(0, |b, i| if row[i] > row[b] { i } else { b });
        correct += usize::from(best == label as usize);
        let z: f64 = row.iter().map(|&v| (v as f64).exp()).sum();
        loss += z.ln() - row[label as usize] as f64;
    }
    assert_eq!(eval.accuracy, correct as f64 / 50.0);
    assert!((eval.mean_loss - loss / 50.0).abs() < 1e-9);
}

#[test]
fn loss_is_positive_and_deterministic() {
    for seed in 0..5 {
        let ds = synth_dataset(20, 10, seed).unwrap();
        let (x, y) = ds.to_batch();
        let w = init_weights(ModelSpec::LenetMnistV1, seed);
        let (a, ga) = nn::loss_and_grad(&w, &x, &y).unwrap();
        let (b, gb) = nn::loss_and_grad(&w, &x, &y).unwrap();
        assert!(a > 0.0);
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(ga.bit_eq(&gb));
    }
}

#[test]
fn synthetic_data_is_learnable_in_thirty_full_batch_steps() {
    for seed in 1..=3 {
        let ds = synth_dataset(200, 10, seed).unwrap();
        let (x, y) = ds.to_batch();
        let mut w = init_weights(ModelSpec::LenetMnistV1, seed);
        for _ in 0..30 {
            let (_, g) = nn::loss_and_grad(&w, &x, &y).unwrap();
            w = nn::sgd_step(&w, &g, 0.1).unwrap();
        }
        let acc = nn::evaluate(&w, &ds).unwrap().accuracy;
        assert!(acc >= 0.9, "seed {seed}: {acc}");
    }
}

#[test]
fn local_training_lowers_shard_loss_in_most_rounds() {
    let task = TaskConfig {
        hyper: HyperParams {
            eta: 0.05,
            local_epochs: 1,
            batch_size: 16,
        },
        ..TaskConfig::default()
    };
    let mut improved = 0;
    let mut total = 0;
    for c in 0..4u32 {
        let shard = synth_dataset(80, 10, 100 + c as u64).unwrap();
        let mut client = ClientState::new(Uuid::from_u128(c as u128), shard, 7);
        client.on_ack(c, task.clone()).unwrap();
        let mut global = init_weights(ModelSpec::LenetMnistV1, 7);
        for round in 1..=10 {
            assert_eq!(
                client.adopt_global(round, true, &global).unwrap(),
                Adoption::Train { round }
            );
            let before = nn::evaluate(&global, client.shard()).unwrap().mean_loss;
            let trained = client.local_train(round).unwrap().weights;
            let after = nn::evaluate(&trained, client.shard()).unwrap().mean_loss;
            improved += usize::from(after < before);
            total += 1;
            global = trained;
        }
    }
    assert!(improved * 10 >= total * 8, "{improved}/{total}");
}
