//! Client-side round logic: adopt the global model, train on the local shard,
//! perturb, and build the upload. Transport-free; the network runtime and the
//! sequential simulator both drive this state machine.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;
use uuid::Uuid;

use crate::data::ClientDataset;
use crate::ldp::{self, LdpError};
use crate::nn::{self, NnError, WeightsBundle};
use crate::proto::{FedMessage, TaskConfig};
use crate::seed::{self, NoiseSeed};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClientError {
    #[error("client has not been registered yet")]
    NotRegistered,
    #[error("no global model adopted yet")]
    NoModel,
    #[error("data error: {0}")]
    Data(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Ldp(#[from] LdpError),
}

/// What the caller should do after a `global_model` message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Adoption {
    /// Model adopted and this client was selected: train for `round`.
    Train { round: u32 },
    /// Model adopted, nothing to upload this round.
    Idle,
    /// Message was older than the current round and was ignored.
    Stale { current: u32 },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: WeightsBundle,
    /// Sample-weighted mean of the mini-batch losses of the final epoch.
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: Uuid,
    client_index: Option<u32>,
    task: Option<TaskConfig>,
    local_model: Option<WeightsBundle>,
    round: u32,
    /// Shared so that snapshots for background training are cheap.
    shard: Arc<ClientDataset>,
    /// Master seed for shuffles and noise.
    seed: u64,
}

impl ClientState {
    pub fn new(client_id: Uuid, shard: ClientDataset, seed: u64) -> Self {
        Self {
            client_id,
            client_index: None,
            task: None,
            local_model: None,
            round: 0,
            shard: Arc::new(shard),
            seed,
        }
    }

    pub fn num_samples(&self) -> u64 {
        self.shard.len() as u64
    }

    pub fn shard(&self) -> &ClientDataset {
        &self.shard
    }

    pub fn client_index(&self) -> Option<u32> {
        self.client_index
    }

    pub fn task(&self) -> Option<&TaskConfig> {
        self.task.as_ref()
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn local_model(&self) -> Option<&WeightsBundle> {
        self.local_model.as_ref()
    }

    pub fn register_message(&self) -> FedMessage {
        FedMessage::Register {
            client_id: self.client_id,
            num_samples: self.num_samples(),
        }
    }

    /// Applies a `register_ack`. Re-registration after a reconnect keeps the
    /// adopted model and round counter.
    pub fn on_ack(&mut self, client_index: u32, task: TaskConfig) -> Result<(), ClientError> {
        task.validate()
            .map_err(|(field, reason)| ClientError::Protocol(format!("task.{field}: {reason}")))?;
        if let Some(model) = &self.local_model {
            model.check_conforms(task.model())?;
        }
        self.client_index = Some(client_index);
        self.task = Some(task);
        Ok(())
    }

    /// Replaces the local model with the global one for `round`.
    pub fn adopt_global(
        &mut self,
        round: u32,
        selected: bool,
        weights: &WeightsBundle,
    ) -> Result<Adoption, ClientError> {
        let task = self.task.as_ref().ok_or(ClientError::NotRegistered)?;
        if round < self.round {
            return Ok(Adoption::Stale {
                current: self.round,
            });
        }
        weights
            .check_conforms(task.model())
            .map_err(|e| ClientError::Protocol(format!("global model: {e}")))?;
        self.local_model = Some(weights.clone());
        self.round = round;
        Ok(if selected {
            Adoption::Train { round }
        } else {
            Adoption::Idle
        })
    }

    /// `local_epochs` passes of mini-batch SGD over the shard, each pass in a
    /// fresh Fisher-Yates order; the trailing short batch is kept.
    pub fn local_train(&self, round: u32) -> Result<TrainOutcome, ClientError> {
        let task = self.task.as_ref().ok_or(ClientError::NotRegistered)?;
        let index = self.client_index.ok_or(ClientError::NotRegistered)?;
        let mut w = self.local_model.clone().ok_or(ClientError::NoModel)?;
        if self.shard.is_empty() {
            return Err(ClientError::Data("local shard is empty".into()));
        }
        let hyper = task.hyper;
        let mut order: Vec<usize> = (0..self.shard.len()).collect();
        let mut loss = 0.0;
        for epoch in 0..hyper.local_epochs {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed::shuffle_seed(self.seed, index, round, epoch));
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for batch in order.chunks(hyper.batch_size as usize) {
                let samples = batch
                    .iter()
                    .map(|&i| (self.shard.image(i), self.shard.labels()[i] as usize));
                let (batch_loss, grads) = nn::loss_grad_samples(&w, samples)?;
                epoch_loss += batch_loss * batch.len() as f64;
                w = nn::sgd_step(&w, &grads, hyper.eta)?;
            }
            loss = epoch_loss / self.shard.len() as f64;
        }
        Ok(TrainOutcome { weights: w, loss })
    }

    /// Perturbs trained weights and wraps them in a `local_update`.
    pub fn produce_update(
        &self,
        round: u32,
        trained: &WeightsBundle,
    ) -> Result<FedMessage, ClientError> {
        let task = self.task.as_ref().ok_or(ClientError::NotRegistered)?;
        let index = self.client_index.ok_or(ClientError::NotRegistered)?;
        let noisy = ldp::perturb(
            trained,
            &task.privacy,
            NoiseSeed::derive(self.seed, index, round),
        )?;
        Ok(FedMessage::LocalUpdate {
            round,
            client_id: self.client_id,
            num_samples: self.num_samples(),
            weights: noisy,
        })
    }
}
