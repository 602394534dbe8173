//! In-process transport: connections are pairs of channels.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use tokio::sync::mpsc;

use crate::link::{Link, Outbound, ServerEvent};
use crate::NetError;

#[derive(Debug, Clone)]
pub struct MemoryHub {
    events: mpsc::UnboundedSender<ServerEvent>,
    next: Arc<AtomicU64>,
}

impl MemoryHub {
    pub fn new(events: mpsc::UnboundedSender<ServerEvent>) -> Self {
        Self {
            events,
            // Leaves room below for other transports sharing one server.
            next: Arc::new(AtomicU64::new(1 << 32)),
        }
    }

    pub fn connect(&self) -> Result<Link, NetError> {
        let conn = self.next.fetch_add(1, Ordering::Relaxed);
        let (out_tx, out_rx) = mpsc::unbounded_channel::<Outbound>();
        self.events
            .send(ServerEvent::Opened {
                conn,
                outbound: out_tx,
            })
            .map_err(|_| NetError::ServerGone)?;
        let (in_tx, mut in_rx) = mpsc::unbounded_channel::<String>();
        let events = self.events.clone();
        tokio::spawn(async move {
            while let Some(text) = in_rx.recv().await {
                if events.send(ServerEvent::Frame { conn, text }).is_err() {
                    return;
                }
            }
            let _ = events.send(ServerEvent::Closed { conn });
        });
        Ok(Link {
            tx: in_tx,
            rx: out_rx,
        })
    }
}
