//! Networked federation: the parameter server and the headless client
//! runtime, connected over WebSocket or in-process channels.

pub mod client;
pub mod link;
pub mod memory;
pub mod server;
pub mod ws;

use thiserror::Error;
use webfed_core::client::ClientError;
use webfed_core::fedavg::FedError;
use webfed_core::nn::NnError;
use webfed_core::proto::ProtoError;

pub use client::{run_client, ClientOptions, ClientReport, Connector};
pub use link::{ConnId, Link, Outbound, ServerEvent};
pub use memory::MemoryHub;
pub use server::{Server, ServerConfig, ServerOutcome, SharedRecords};
pub use ws::{connect_ws, serve_ws, WsServer};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("websocket error: {0}")]
    WebSocket(String),
    #[error("server is no longer accepting events")]
    ServerGone,
    #[error("round {round} received no updates after one retry")]
    RoundFailed { round: u32 },
    #[error("connection refused by server: {0}")]
    Refused(String),
    #[error("gave up after {attempts} connection attempts")]
    ConnectionLost { attempts: u32 },
    #[error("internal error: {0}")]
    Internal(String),
    #[error(transparent)]
    Proto(#[from] ProtoError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Fed(#[from] FedError),
    #[error(transparent)]
    Nn(#[from] NnError),
}
