//! Round orchestration for the parameter server.
//!
//! A single task owns the registry and the round state. Transports deliver
//! [`ServerEvent`]s over one ordered queue and receive frames through the
//! per-connection sender handed over in `Opened`.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use tokio::sync::mpsc;
use tokio::time::timeout_at;
use tracing::{debug, info, warn};
use uuid::Uuid;
use webfed_core::data::ClientDataset;
use webfed_core::fedavg::{self, metrics_csv, RegistryEntry, RoundRecord, Update};
use webfed_core::nn::{self, WeightsBundle};
use webfed_core::proto::{decode, encode, FedMessage, TaskConfig};

use crate::link::{ConnId, Outbound, ServerEvent, CLOSE_NORMAL, CLOSE_PROTOCOL_ERROR};
use crate::NetError;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub task: TaskConfig,
    /// Master seed: model initialisation and client selection.
    pub seed: u64,
    /// Registered clients required before round 1 starts.
    pub min_clients: u32,
    pub round_timeout: Duration,
    /// Rewritten after every round when set.
    pub metrics_out: Option<PathBuf>,
}

impl ServerConfig {
    /// Defaults: `min_clients = m`, 120 s rounds, no metrics file.
    pub fn new(task: TaskConfig, seed: u64) -> Self {
        Self {
            min_clients: task.clients_per_round,
            task,
            seed,
            round_timeout: Duration::from_secs(120),
            metrics_out: None,
        }
    }
}

/// Records of completed rounds, readable while the server runs.
pub type SharedRecords = Arc<Mutex<Vec<RoundRecord>>>;

#[derive(Debug, Clone)]
pub struct ServerOutcome {
    pub records: Vec<RoundRecord>,
    pub final_model: WeightsBundle,
}

#[derive(Debug, Clone)]
struct ClientRecord {
    client_id: Uuid,
    num_samples: u64,
    conn: Option<ConnId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Broadcasting,
    Collecting,
    Aggregating,
}

#[derive(Debug)]
struct RoundState {
    round: u32,
    phase: Phase,
    selected: Vec<u32>,
    received: BTreeMap<u32, Update>,
    deadline: tokio::time::Instant,
}

pub struct Server {
    config: ServerConfig,
    test_set: Arc<ClientDataset>,
    events: mpsc::UnboundedReceiver<ServerEvent>,
    events_tx: mpsc::UnboundedSender<ServerEvent>,
    records: SharedRecords,
    conns: HashMap<ConnId, mpsc::UnboundedSender<Outbound>>,
    /// Connection to client index, once registered.
    bound: HashMap<ConnId, u32>,
    /// Indexed by client index.
    registry: Vec<ClientRecord>,
    global: WeightsBundle,
    round: Option<RoundState>,
}

impl Server {
    pub fn new(config: ServerConfig, test_set: ClientDataset) -> Result<Self, NetError> {
        config
            .task
            .validate()
            .map_err(|(field, reason)| NetError::Config(format!("task.{field}: {reason}")))?;
        if test_set.is_empty() {
            return Err(NetError::Config("test set is empty".into()));
        }
        let (events_tx, events) = mpsc::unbounded_channel();
        let global = nn::init_weights(config.task.model(), config.seed);
        Ok(Self {
            config,
            test_set: Arc::new(test_set),
            events,
            events_tx,
            records: SharedRecords::default(),
            conns: HashMap::new(),
            bound: HashMap::new(),
            registry: Vec::new(),
            global,
            round: None,
        })
    }

    /// Where transports deliver connection events.
    pub fn events(&self) -> mpsc::UnboundedSender<ServerEvent> {
        self.events_tx.clone()
    }

    pub fn records(&self) -> SharedRecords {
        self.records.clone()
    }

    /// Runs registration and all `T` rounds, then shuts every client down.
    pub async fn run(mut self) -> Result<ServerOutcome, NetError> {
        self.write_metrics()?;
        let result = self.run_rounds().await;
        self.shutdown_all();
        result?;
        Ok(ServerOutcome {
            records: self.records.lock().expect("records lock").clone(),
            final_model: self.global,
        })
    }

    async fn run_rounds(&mut self) -> Result<(), NetError> {
        let total = self.config.task.rounds_total;
        if total == 0 {
            info!("rounds_total is 0; nothing to do");
            return Ok(());
        }
        info!(min_clients = self.config.min_clients, "waiting for clients");
        while self.eligible_connected() < self.config.min_clients as usize {
            let event = self.next_event().await?;
            self.handle(event);
        }

        for round in 1..=total {
            let started = Instant::now();
            let mut attempt = 0;
            let updates = loop {
                let updates = self.collect_round(round, attempt).await?;
                if !updates.is_empty() {
                    break updates;
                }
                if attempt == 1 {
                    return Err(NetError::RoundFailed { round });
                }
                warn!(round, "no updates before the deadline; retrying with a fresh selection");
                attempt = 1;
            };
            let record = self.finish_round(round, updates, started).await?;
            info!(
                round,
                accuracy = record.accuracy,
                loss = record.loss,
                updates = record.num_updates_received,
                "round complete"
            );
        }

        // Final adoption so every client ends on ω(T).
        let final_round = total + 1;
        let frame = encode(&FedMessage::GlobalModel {
            round: final_round,
            selected: false,
            weights: self.global.clone(),
        })?;
        for conn in self.bound.keys().copied().collect::<Vec<_>>() {
            self.send(conn, frame.clone());
        }
        Ok(())
    }

    async fn collect_round(&mut self, round: u32, attempt: u32) -> Result<Vec<Update>, NetError> {
        let registry: Vec<RegistryEntry> = self
            .registry
            .iter()
            .enumerate()
            .map(|(i, r)| RegistryEntry {
                client_index: i as u32,
                num_samples: r.num_samples,
                connected: r.conn.is_some(),
            })
            .collect();
        let selected = fedavg::select_clients(
            &registry,
            self.config.task.clients_per_round,
            self.config.seed,
            round,
            attempt,
        )?;
        debug!(round, attempt, ?selected, "selected clients");
        self.round = Some(RoundState {
            round,
            phase: Phase::Broadcasting,
            selected,
            received: BTreeMap::new(),
            deadline: tokio::time::Instant::now() + self.config.round_timeout,
        });
        for index in 0..self.registry.len() as u32 {
            self.send_global(index)?;
        }
        self.state_mut().phase = Phase::Collecting;

        loop {
            let st = self.state();
            if st.received.len() == st.selected.len() {
                break;
            }
            let deadline = st.deadline;
            match timeout_at(deadline, self.events.recv()).await {
                Ok(Some(event)) => self.handle(event),
                Ok(None) => return Err(NetError::ServerGone),
                Err(_) => {
                    let st = self.state();
                    warn!(
                        round,
                        received = st.received.len(),
                        selected = st.selected.len(),
                        "round deadline passed"
                    );
                    break;
                }
            }
        }
        let st = self.state_mut();
        st.phase = Phase::Aggregating;
        Ok(std::mem::take(&mut st.received).into_values().collect())
    }

    async fn finish_round(
        &mut self,
        round: u32,
        updates: Vec<Update>,
        started: Instant,
    ) -> Result<RoundRecord, NetError> {
        let test_set = self.test_set.clone();
        let received = updates.len() as u32;
        let (global, eval) = tokio::task::spawn_blocking(move || {
            let global = fedavg::aggregate(&updates)?;
            let eval = nn::evaluate(&global, &test_set)?;
            Ok::<_, NetError>((global, eval))
        })
        .await
        .map_err(|e| NetError::Internal(e.to_string()))??;
        self.global = global;
        let record = RoundRecord {
            round,
            accuracy: eval.accuracy,
            loss: eval.mean_loss,
            wall_time_seconds: started.elapsed().as_secs_f64(),
            num_updates_received: received,
        };
        self.records.lock().expect("records lock").push(record);
        self.write_metrics()?;
        self.round = None;

        let frame = encode(&FedMessage::RoundMetrics {
            round,
            accuracy: record.accuracy as f32,
            loss: record.loss as f32,
        })?;
        for conn in self.bound.keys().copied().collect::<Vec<_>>() {
            self.send(conn, frame.clone());
        }
        Ok(record)
    }

    fn state(&self) -> &RoundState {
        self.round.as_ref().expect("inside a round")
    }

    fn state_mut(&mut self) -> &mut RoundState {
        self.round.as_mut().expect("inside a round")
    }

    async fn next_event(&mut self) -> Result<ServerEvent, NetError> {
        self.events.recv().await.ok_or(NetError::ServerGone)
    }

    fn eligible_connected(&self) -> usize {
        self.registry
            .iter()
            .filter(|r| r.conn.is_some() && r.num_samples >= 1)
            .count()
    }

    fn handle(&mut self, event: ServerEvent) {
        match event {
            ServerEvent::Opened { conn, outbound } => {
                debug!(conn, "connection opened");
                self.conns.insert(conn, outbound);
            }
            ServerEvent::Closed { conn } => {
                debug!(conn, "connection closed");
                self.conns.remove(&conn);
                if let Some(index) = self.bound.remove(&conn) {
                    info!(client_index = index, "client departed");
                    self.registry[index as usize].conn = None;
                }
            }
            ServerEvent::Frame { conn, text } => match decode(text.as_bytes()) {
                Ok(msg) => self.handle_message(conn, msg),
                Err(e) => {
                    warn!(conn, error = %e, "undecodable frame");
                    self.close(conn, CLOSE_PROTOCOL_ERROR, &e.to_string());
                }
            },
        }
    }

    fn handle_message(&mut self, conn: ConnId, msg: FedMessage) {
        match msg {
            FedMessage::Register {
                client_id,
                num_samples,
            } => self.register(conn, client_id, num_samples),
            FedMessage::LocalUpdate {
                round,
                client_id,
                num_samples,
                weights,
            } => {
                if let Err(reason) = self.accept_update(conn, round, client_id, num_samples, weights) {
                    warn!(conn, round, %client_id, "update rejected: {reason}");
                }
            }
            other => warn!(conn, kind = other.type_name(), "unexpected message from client"),
        }
    }

    fn register(&mut self, conn: ConnId, client_id: Uuid, num_samples: u64) {
        if self.bound.contains_key(&conn) {
            warn!(conn, "repeated register on one connection ignored");
            return;
        }
        let existing = self.registry.iter().position(|r| r.client_id == client_id);
        let index = match existing {
            Some(i) if self.registry[i].conn.is_some() => {
                warn!(conn, %client_id, "duplicate client_id refused");
                self.close(conn, CLOSE_PROTOCOL_ERROR, "client_id already connected");
                return;
            }
            Some(i) if self.registry[i].num_samples != num_samples => {
                warn!(conn, %client_id, "reconnect with a different sample count refused");
                self.close(conn, CLOSE_PROTOCOL_ERROR, "num_samples differs from registration");
                return;
            }
            Some(i) => {
                info!(client_index = i, %client_id, "client reconnected");
                i
            }
            None => {
                self.registry.push(ClientRecord {
                    client_id,
                    num_samples,
                    conn: None,
                });
                let i = self.registry.len() - 1;
                info!(client_index = i, %client_id, num_samples, "client registered");
                i
            }
        };
        self.registry[index].conn = Some(conn);
        self.bound.insert(conn, index as u32);
        match encode(&FedMessage::RegisterAck {
            client_index: index as u32,
            task: self.config.task.clone(),
        }) {
            Ok(frame) => self.send(conn, frame),
            Err(e) => warn!(error = %e, "cannot encode register_ack"),
        }
        // Late joiners and reconnects pick up the round in progress.
        if self.round.as_ref().is_some_and(|r| r.phase == Phase::Collecting) {
            if let Err(e) = self.send_global(index as u32) {
                warn!(error = %e, "cannot send global model");
            }
        }
    }

    fn accept_update(
        &mut self,
        conn: ConnId,
        round: u32,
        client_id: Uuid,
        num_samples: u64,
        weights: WeightsBundle,
    ) -> Result<(), String> {
        let index = *self.bound.get(&conn).ok_or("connection is not registered")?;
        let record = &self.registry[index as usize];
        if record.client_id != client_id {
            return Err(format!("connection belongs to {}", record.client_id));
        }
        if record.num_samples != num_samples {
            return Err(format!("registered with {} samples", record.num_samples));
        }
        let state = self
            .round
            .as_mut()
            .filter(|r| r.phase == Phase::Collecting)
            .ok_or("no round is collecting")?;
        if round != state.round {
            return Err(format!("stale round, current is {}", state.round));
        }
        if state.selected.binary_search(&index).is_err() {
            return Err("client was not selected".into());
        }
        if state.received.contains_key(&index) {
            return Err("duplicate update".into());
        }
        if !weights.same_structure(&self.global) {
            return Err("weights do not match the global model".into());
        }
        debug!(round, client_index = index, "update accepted");
        state.received.insert(
            index,
            Update {
                num_samples,
                weights,
            },
        );
        Ok(())
    }

    /// Sends the current round's model to one client, if it is connected.
    fn send_global(&mut self, index: u32) -> Result<(), NetError> {
        let Some(conn) = self.registry[index as usize].conn else {
            return Ok(());
        };
        let st = self.state();
        let frame = encode(&FedMessage::GlobalModel {
            round: st.round,
            selected: st.selected.binary_search(&index).is_ok(),
            weights: self.global.clone(),
        })?;
        self.send(conn, frame);
        Ok(())
    }

    fn send(&mut self, conn: ConnId, frame: String) {
        if let Some(tx) = self.conns.get(&conn) {
            let _ = tx.send(Outbound::Text(frame));
        }
    }

    fn close(&mut self, conn: ConnId, code: u16, reason: &str) {
        if let Some(tx) = self.conns.remove(&conn) {
            let _ = tx.send(Outbound::Close {
                code,
                reason: reason.to_string(),
            });
        }
        if let Some(index) = self.bound.remove(&conn) {
            self.registry[index as usize].conn = None;
        }
    }

    fn shutdown_all(&mut self) {
        // Connections already queued should hear the shutdown too.
        while let Ok(event) = self.events.try_recv() {
            self.handle(event);
        }
        let frame = encode(&FedMessage::Shutdown).expect("shutdown encodes");
        for (_, tx) in self.conns.drain() {
            let _ = tx.send(Outbound::Text(frame.clone()));
            let _ = tx.send(Outbound::Close {
                code: CLOSE_NORMAL,
                reason: "session complete".into(),
            });
        }
        self.bound.clear();
        for r in &mut self.registry {
            r.conn = None;
        }
    }

    fn write_metrics(&self) -> Result<(), NetError> {
        if let Some(path) = &self.config.metrics_out {
            let csv = metrics_csv(&self.records.lock().expect("records lock"));
            std::fs::write(path, csv).map_err(|source| NetError::Io {
                path: path.display().to_string(),
                source,
            })?;
        }
        Ok(())
    }
}
