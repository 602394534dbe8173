//! WebSocket transport (`/ws`, subprotocol `webfed/1`) plus the small HTTP
//! surface: `/healthz` and `/metrics.csv`.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::extract::ws::{CloseFrame, Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::header;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;
use tokio_tungstenite::tungstenite::client::IntoClientRequest;
use tokio_tungstenite::tungstenite::http::HeaderValue;
use tokio_tungstenite::tungstenite::Message as TMessage;
use tracing::debug;
use webfed_core::fedavg::metrics_csv;
use webfed_core::proto::PROTOCOL;

use crate::link::{Link, Outbound, ServerEvent, CLOSE_UNSUPPORTED_DATA};
use crate::server::SharedRecords;
use crate::NetError;

#[derive(Clone)]
struct AppState {
    events: mpsc::UnboundedSender<ServerEvent>,
    records: SharedRecords,
    next: Arc<AtomicU64>,
}

/// A running HTTP/WebSocket listener.
pub struct WsServer {
    pub local_addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    task: JoinHandle<std::io::Result<()>>,
}

impl WsServer {
    /// Stops accepting connections and waits for the listener to exit.
    pub async fn stop(mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        let _ = self.task.await;
    }
}

pub async fn serve_ws(
    addr: &str,
    events: mpsc::UnboundedSender<ServerEvent>,
    records: SharedRecords,
) -> Result<WsServer, NetError> {
    let listener = TcpListener::bind(addr).await.map_err(|source| NetError::Io {
        path: addr.to_string(),
        source,
    })?;
    let local_addr = listener.local_addr().map_err(|source| NetError::Io {
        path: addr.to_string(),
        source,
    })?;
    let app = Router::new()
        .route("/ws", get(upgrade))
        .route("/healthz", get(|| async { "ok" }))
        .route("/metrics.csv", get(metrics))
        .with_state(AppState {
            events,
            records,
            next: Arc::new(AtomicU64::new(1)),
        });
    let (stop, stopped) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = stopped.await;
            })
            .await
    });
    Ok(WsServer {
        local_addr,
        stop: Some(stop),
        task,
    })
}

async fn metrics(State(st): State<AppState>) -> Response {
    let body = metrics_csv(&st.records.lock().expect("records lock"));
    ([(header::CONTENT_TYPE, "text/csv")], body).into_response()
}

async fn upgrade(ws: WebSocketUpgrade, State(st): State<AppState>) -> Response {
    ws.protocols([PROTOCOL])
        .on_upgrade(move |socket| connection(socket, st))
}

async fn connection(socket: WebSocket, st: AppState) {
    let conn = st.next.fetch_add(1, Ordering::Relaxed);
    let (out_tx, mut out_rx) = mpsc::unbounded_channel::<Outbound>();
    if st
        .events
        .send(ServerEvent::Opened {
            conn,
            outbound: out_tx.clone(),
        })
        .is_err()
    {
        return;
    }
    let (mut sink, mut stream) = socket.split();

    let writer = tokio::spawn(async move {
        while let Some(out) = out_rx.recv().await {
            match out {
                Outbound::Text(text) => {
                    if sink.send(Message::Text(text)).await.is_err() {
                        return;
                    }
                }
                Outbound::Close { code, reason } => {
                    let frame = CloseFrame {
                        code,
                        reason: reason.into(),
                    };
                    let _ = sink.send(Message::Close(Some(frame))).await;
                    return;
                }
            }
        }
        let _ = sink.close().await;
    });

    while let Some(Ok(msg)) = stream.next().await {
        match msg {
            Message::Text(text) => {
                if st.events.send(ServerEvent::Frame { conn, text }).is_err() {
                    break;
                }
            }
            Message::Binary(_) => {
                let _ = out_tx.send(Outbound::Close {
                    code: CLOSE_UNSUPPORTED_DATA,
                    reason: "text frames only".into(),
                });
                break;
            }
            Message::Close(_) => break,
            Message::Ping(_) | Message::Pong(_) => {}
        }
    }
    drop(out_tx);
    debug!(conn, "websocket reader finished");
    let _ = st.events.send(ServerEvent::Closed { conn });
    let _ = writer.await;
}

/// Opens a client connection to `url` (e.g. `ws://127.0.0.1:8080/ws`).
pub async fn connect_ws(url: &str) -> Result<Link, NetError> {
    let mut request = url
        .into_client_request()
        .map_err(|e| NetError::WebSocket(e.to_string()))?;
    request
        .headers_mut()
        .insert("Sec-WebSocket-Protocol", HeaderValue::from_static(PROTOCOL));
    let (stream, _) = tokio_tungstenite::connect_async(request)
        .await
        .map_err(|e| NetError::WebSocket(e.to_string()))?;
    let (mut sink, mut source) = stream.split();

    let (tx, mut out_rx) = mpsc::unbounded_channel::<String>();
    tokio::spawn(async move {
        while let Some(text) = out_rx.recv().await {
            if sink.send(TMessage::Text(text)).await.is_err() {
                return;
            }
        }
        let _ = sink.close().await;
    });

    let (in_tx, rx) = mpsc::unbounded_channel::<Outbound>();
    tokio::spawn(async move {
        while let Some(Ok(msg)) = source.next().await {
            let out = match msg {
                TMessage::Text(text) => Outbound::Text(text),
                TMessage::Close(frame) => {
                    let (code, reason) = frame
                        .map(|f| (u16::from(f.code), f.reason.into_owned()))
                        .unwrap_or((1005, String::new()));
                    let _ = in_tx.send(Outbound::Close { code, reason });
                    return;
                }
                _ => continue,
            };
            if in_tx.send(out).is_err() {
                return;
            }
        }
    });
    Ok(Link { tx, rx })
}
