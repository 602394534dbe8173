//! The connection shape shared by every transport.

use tokio::sync::mpsc;

/// Server-assigned connection number, unique for the life of a server.
pub type ConnId = u64;

/// Close code sent when the peer breaks the protocol (RFC 6455 §7.4.1).
pub const CLOSE_PROTOCOL_ERROR: u16 = 1002;
/// Close code for non-text frames.
pub const CLOSE_UNSUPPORTED_DATA: u16 = 1003;
/// Close code for an orderly end of session.
pub const CLOSE_NORMAL: u16 = 1000;

/// A frame travelling towards a peer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outbound {
    Text(String),
    Close { code: u16, reason: String },
}

/// What the transports feed the server orchestrator, in arrival order.
#[derive(Debug)]
pub enum ServerEvent {
    Opened {
        conn: ConnId,
        outbound: mpsc::UnboundedSender<Outbound>,
    },
    Frame {
        conn: ConnId,
        text: String,
    },
    Closed {
        conn: ConnId,
    },
}

/// Client end of a connection. Dropping `tx` closes the connection.
#[derive(Debug)]
pub struct Link {
    pub tx: mpsc::UnboundedSender<String>,
    pub rx: mpsc::UnboundedReceiver<Outbound>,
}
