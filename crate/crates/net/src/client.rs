//! Headless client: register, then adopt → train → perturb → upload until the
//! server says `shutdown`. Lost connections are retried with exponential
//! backoff under the same `client_id`.

use std::time::Duration;

use tokio::sync::oneshot;
use tracing::{debug, info, warn};
use webfed_core::client::{Adoption, ClientState};
use webfed_core::nn::WeightsBundle;
use webfed_core::proto::{decode, encode, FedMessage};

use crate::link::{Link, Outbound, CLOSE_PROTOCOL_ERROR};
use crate::memory::MemoryHub;
use crate::ws::connect_ws;
use crate::NetError;

/// How a client reaches its server.
#[derive(Debug, Clone)]
pub enum Connector {
    Memory(MemoryHub),
    Ws(String),
}

impl Connector {
    pub async fn connect(&self) -> Result<Link, NetError> {
        match self {
            Connector::Memory(hub) => hub.connect(),
            Connector::Ws(url) => connect_ws(url).await,
        }
    }
}

#[derive(Debug)]
pub struct ClientOptions {
    /// Consecutive failed connections tolerated before giving up.
    pub reconnect_attempts: u32,
    /// First backoff delay; doubles after every failure.
    pub backoff: Duration,
    /// Fired with the client index on the first `register_ack`.
    pub registered: Option<oneshot::Sender<u32>>,
}

impl Default for ClientOptions {
    fn default() -> Self {
        Self {
            reconnect_attempts: 5,
            backoff: Duration::from_millis(200),
            registered: None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ClientReport {
    pub client_index: Option<u32>,
    /// Rounds this client trained and uploaded for, in order.
    pub rounds_trained: Vec<u32>,
    /// `(round, accuracy, loss)` as announced by the server.
    pub metrics: Vec<(u32, f32, f32)>,
    pub final_model: Option<WeightsBundle>,
    pub reconnects: u32,
}

enum SessionEnd {
    Shutdown,
    Lost,
}

/// Runs one client to completion.
pub async fn run_client(
    connector: &Connector,
    mut state: ClientState,
    mut opts: ClientOptions,
) -> Result<ClientReport, NetError> {
    let mut report = ClientReport::default();
    let mut failures = 0u32;
    loop {
        let end = match connector.connect().await {
            Ok(link) => session(link, &mut state, &mut report, &mut opts, &mut failures).await?,
            Err(e) => {
                warn!(error = %e, "connection failed");
                SessionEnd::Lost
            }
        };
        match end {
            SessionEnd::Shutdown => {
                report.final_model = state.local_model().cloned();
                info!(client_id = %state.client_id, "shutdown received");
                return Ok(report);
            }
            SessionEnd::Lost => {
                failures += 1;
                if failures > opts.reconnect_attempts {
                    return Err(NetError::ConnectionLost { attempts: failures });
                }
                let delay = opts.backoff * 2u32.saturating_pow(failures - 1);
                warn!(attempt = failures, ?delay, "connection lost; reconnecting");
                report.reconnects += 1;
                tokio::time::sleep(delay).await;
            }
        }
    }
}

async fn session(
    mut link: Link,
    state: &mut ClientState,
    report: &mut ClientReport,
    opts: &mut ClientOptions,
    failures: &mut u32,
) -> Result<SessionEnd, NetError> {
    if link.tx.send(encode(&state.register_message())?).is_err() {
        return Ok(SessionEnd::Lost);
    }
    while let Some(out) = link.rx.recv().await {
        let text = match out {
            Outbound::Text(text) => text,
            Outbound::Close { code, reason } if code == CLOSE_PROTOCOL_ERROR => {
                return Err(NetError::Refused(reason));
            }
            Outbound::Close { code, reason } => {
                debug!(code, reason, "server closed the connection");
                return Ok(SessionEnd::Lost);
            }
        };
        match decode(text.as_bytes())? {
            FedMessage::RegisterAck { client_index, task } => {
                state.on_ack(client_index, task)?;
                report.client_index = Some(client_index);
                *failures = 0;
                if let Some(tx) = opts.registered.take() {
                    let _ = tx.send(client_index);
                }
                info!(client_index, "registered");
            }
            FedMessage::GlobalModel {
                round,
                selected,
                weights,
            } => match state.adopt_global(round, selected, &weights)? {
                Adoption::Train { round } => {
                    let frame = train_and_pack(state, round).await?;
                    if link.tx.send(frame).is_err() {
                        return Ok(SessionEnd::Lost);
                    }
                    report.rounds_trained.push(round);
                }
                Adoption::Idle => debug!(round, "adopted global model"),
                Adoption::Stale { current } => {
                    warn!(round, current, "ignoring global model from an older round")
                }
            },
            FedMessage::RoundMetrics {
                round,
                accuracy,
                loss,
            } => {
                info!(round, accuracy, loss, "round metrics");
                report.metrics.push((round, accuracy, loss));
            }
            FedMessage::Shutdown => return Ok(SessionEnd::Shutdown),
            other => warn!(kind = other.type_name(), "unexpected message from server"),
        }
    }
    Ok(SessionEnd::Lost)
}

/// Trains off the async executor and returns the encoded `local_update`.
async fn train_and_pack(state: &ClientState, round: u32) -> Result<String, NetError> {
    let snapshot = state.clone();
    tokio::task::spawn_blocking(move || {
        let trained = snapshot.local_train(round)?;
        let msg = snapshot.produce_update(round, &trained.weights)?;
        Ok(encode(&msg)?)
    })
    .await
    .map_err(|e| NetError::Internal(e.to_string()))?
}
