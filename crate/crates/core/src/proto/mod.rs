//! The `webfed/1` wire protocol.
//!
//! One JSON object per WebSocket text frame, discriminated by a `"type"`
//! field:
//!
//! | type            | fields                                                   |
//! |-----------------|----------------------------------------------------------|
//! | `register`      | `protocol`, `client_id` (UUID), `num_samples`            |
//! | `register_ack`  | `protocol`, `client_index`, `task`                       |
//! | `global_model`  | `round`, `selected`, `weights`                           |
//! | `local_update`  | `round`, `client_id`, `num_samples`, `weights`           |
//! | `round_metrics` | `round`, `accuracy`, `loss`                              |
//! | `shutdown`      |                                                          |
//!
//! Weights travel as `{"tensors": [{"name", "shape", "data"}, ...]}` where
//! `data` is standard base64 (padded) over little-endian IEEE-754 `f32`s.

mod codec;
mod task;

use thiserror::Error;
use uuid::Uuid;

use crate::nn::WeightsBundle;

pub use codec::{decode, decode_weights, encode, encode_weights, weights_to_json};
pub use task::{HyperParams, TaskConfig};

/// Subprotocol name and version string exchanged at registration.
pub const PROTOCOL: &str = "webfed/1";

#[derive(Debug, Clone, PartialEq)]
pub enum FedMessage {
    Register {
        client_id: Uuid,
        num_samples: u64,
    },
    RegisterAck {
        client_index: u32,
        task: TaskConfig,
    },
    GlobalModel {
        round: u32,
        selected: bool,
        weights: WeightsBundle,
    },
    LocalUpdate {
        round: u32,
        client_id: Uuid,
        num_samples: u64,
        weights: WeightsBundle,
    },
    RoundMetrics {
        round: u32,
        accuracy: f32,
        loss: f32,
    },
    Shutdown,
}

impl FedMessage {
    pub fn type_name(&self) -> &'static str {
        match self {
            FedMessage::Register { .. } => "register",
            FedMessage::RegisterAck { .. } => "register_ack",
            FedMessage::GlobalModel { .. } => "global_model",
            FedMessage::LocalUpdate { .. } => "local_update",
            FedMessage::RoundMetrics { .. } => "round_metrics",
            FedMessage::Shutdown => "shutdown",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Parse,
    Protocol,
    Schema,
    Codec,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtoError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("schema error in `{field}`: {reason}")]
    Schema { field: String, reason: String },
    #[error("codec error in `{field}`: {reason}")]
    Codec { field: String, reason: String },
}

impl ProtoError {
    pub fn class(&self) -> ErrorClass {
        match self {
            ProtoError::Parse(_) => ErrorClass::Parse,
            ProtoError::Protocol(_) => ErrorClass::Protocol,
            ProtoError::Schema { .. } => ErrorClass::Schema,
            ProtoError::Codec { .. } => ErrorClass::Codec,
        }
    }

    /// The offending field, for schema and codec errors.
    pub fn field(&self) -> Option<&str> {
        match self {
            ProtoError::Schema { field, .. } | ProtoError::Codec { field, .. } => Some(field),
            _ => None,
        }
    }

    pub(crate) fn schema(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ProtoError::Schema {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn codec(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ProtoError::Codec {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
