//! Single-process sequential federation.
//!
//! Calls the model, privacy and aggregation code directly in the same order
//! and with the same seeds as the networked server, so it doubles as the
//! reference that networked runs must reproduce bit for bit.

use std::time::Instant;

use thiserror::Error;
use uuid::Uuid;

use crate::client::{Adoption, ClientError, ClientState};
use crate::data::ClientDataset;
use crate::fedavg::{self, FedError, RegistryEntry, RoundRecord, Update};
use crate::nn::{self, NnError, WeightsBundle};
use crate::proto::{FedMessage, TaskConfig};
use crate::seed::{self, Stream};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid task: {0}: {1}")]
    Task(&'static str, String),
    #[error("client {index}: {source}")]
    Client {
        index: u32,
        #[source]
        source: ClientError,
    },
    #[error(transparent)]
    Fed(#[from] FedError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub records: Vec<RoundRecord>,
    pub final_model: WeightsBundle,
    /// Every client's model after the final broadcast, by client index.
    pub client_models: Vec<WeightsBundle>,
}

/// Deterministic client id for the `i`-th simulated client of a run.
pub fn client_uuid(seed: u64, i: u32) -> Uuid {
    let hi = seed::derive(seed, Stream::ClientId, &[i as u64, 0]);
    let lo = seed::derive(seed, Stream::ClientId, &[i as u64, 1]);
    uuid::Builder::from_random_bytes(((hi as u128) << 64 | lo as u128).to_be_bytes()).into_uuid()
}

/// Runs `task.rounds_total` rounds over `shards`; client `i` holds `shards[i]`
/// and is registered with index `i`. Server and clients share `seed`.
pub fn simulate(
    task: &TaskConfig,
    seed: u64,
    shards: &[ClientDataset],
    test_set: &ClientDataset,
) -> Result<SimOutcome, SimError> {
    task.validate().map_err(|(f, r)| SimError::Task(f, r))?;
    let mut clients: Vec<ClientState> = shards
        .iter()
        .enumerate()
        .map(|(i, shard)| {
            let mut c = ClientState::new(client_uuid(seed, i as u32), shard.clone(), seed);
            c.on_ack(i as u32, task.clone())
                .map(|_| c)
                .map_err(|source| SimError::Client {
                    index: i as u32,
                    source,
                })
        })
        .collect::<Result<_, _>>()?;
    let registry: Vec<RegistryEntry> = clients
        .iter()
        .enumerate()
        .map(|(i, c)| RegistryEntry {
            client_index: i as u32,
            num_samples: c.num_samples(),
            connected: true,
        })
        .collect();

    let mut global = nn::init_weights(task.model(), seed);
    let mut records = Vec::with_capacity(task.rounds_total as usize);
    for round in 1..=task.rounds_total {
        let started = Instant::now();
        let selected =
            fedavg::select_clients(&registry, task.clients_per_round, seed, round, 0)?;
        let mut updates = Vec::with_capacity(selected.len());
        for (i, client) in clients.iter_mut().enumerate() {
            let index = i as u32;
            let wrap = |source| SimError::Client { index, source };
            let chosen = selected.binary_search(&index).is_ok();
            if let Adoption::Train { round } =
                client.adopt_global(round, chosen, &global).map_err(wrap)?
            {
                let trained = client.local_train(round).map_err(wrap)?;
                match client.produce_update(round, &trained.weights).map_err(wrap)? {
                    FedMessage::LocalUpdate {
                        num_samples,
                        weights,
                        ..
                    } => updates.push(Update {
                        num_samples,
                        weights,
                    }),
                    _ => unreachable!("produce_update builds local_update"),
                }
            }
        }
        global = fedavg::aggregate(&updates)?;
        let eval = nn::evaluate(&global, test_set)?;
        records.push(RoundRecord {
            round,
            accuracy: eval.accuracy,
            loss: eval.mean_loss,
            wall_time_seconds: started.elapsed().as_secs_f64(),
            num_updates_received: updates.len() as u32,
        });
    }

    let final_round = task.rounds_total + 1;
    for (i, client) in clients.iter_mut().enumerate() {
        client
            .adopt_global(final_round, false, &global)
            .map_err(|source| SimError::Client {
                index: i as u32,
                source,
            })?;
    }
    let client_models = clients
        .iter()
        .filter_map(|c| c.local_model().cloned())
        .collect();
    Ok(SimOutcome {
        records,
        final_model: global,
        client_models,
    })
}
