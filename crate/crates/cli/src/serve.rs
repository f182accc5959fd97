//! Telemetry service. The simulation runs on its own thread at the control
//! rate; websocket handlers only forward parsed commands into a queue and
//! relay serialized frames from a broadcast channel.

use std::io::Write;
use std::path::{Component, Path, PathBuf};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use tokio::sync::broadcast;
use tracing::{info, warn};

use quadmix::sim::CONTROL_DT;
use quadmix::telemetry::{Command, SteeringSession};

#[derive(Clone)]
struct AppState {
    commands: mpsc::Sender<Command>,
    frames: broadcast::Sender<String>,
    assets: Option<PathBuf>,
}

fn run_session(
    mut session: SteeringSession,
    commands: mpsc::Receiver<Command>,
    frames: broadcast::Sender<String>,
    mut log: Option<std::io::BufWriter<std::fs::File>>,
) {
    let period = Duration::from_secs_f64(CONTROL_DT);
    let mut next = Instant::now();
    loop {
        let pending: Vec<Command> = commands.try_iter().collect();
        match session.step(pending) {
            Ok(frame) => {
                let text = frame.to_json();
                if let Some(w) = log.as_mut() {
                    if writeln!(w, "{text}").and_then(|_| w.flush()).is_err() {
                        warn!("telemetry log write failed; logging disabled");
                        log = None;
                    }
                }
                // No subscribers is fine; frames are simply dropped.
                let _ = frames.send(text);
            }
            Err(e) => {
                warn!("control step failed ({e}); resetting");
                session.reset();
            }
        }
        next += period;
        let now = Instant::now();
        if next > now {
            std::thread::sleep(next - now);
        } else {
            next = now;
        }
    }
}

async fn ws_route(ws: WebSocketUpgrade, State(state): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| client(socket, state))
}

async fn client(mut socket: WebSocket, state: AppState) {
    let mut frames = state.frames.subscribe();
    loop {
        tokio::select! {
            msg = socket.recv() => match msg {
                Some(Ok(Message::Text(text))) => match Command::parse(text.as_str()) {
                    Ok(cmd) => {
                        if state.commands.send(cmd).is_err() {
                            break;
                        }
                    }
                    Err(e) => warn!("ignoring message: {e}"),
                },
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
            frame = frames.recv() => match frame {
                Ok(text) => {
                    if socket.send(Message::Text(text.into())).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => warn!("client lagging; skipped {n} frames"),
                Err(broadcast::error::RecvError::Closed) => break,
            },
        }
    }
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js") | Some("mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        _ => "application/octet-stream",
    }
}

async fn static_file(State(state): State<AppState>, req: Request) -> Response {
    let Some(root) = state.assets else {
        return (StatusCode::NOT_FOUND, "no assets configured").into_response();
    };
    let rel = Path::new(req.uri().path().trim_start_matches('/'));
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return StatusCode::NOT_FOUND.into_response();
    }
    let mut path = root.join(rel);
    if rel.as_os_str().is_empty() || path.is_dir() {
        path = path.join("index.html");
    }
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response(),
        Err(_) => StatusCode::NOT_FOUND.into_response(),
    }
}

pub fn serve(session: SteeringSession, port: u16, assets: Option<PathBuf>, log: Option<PathBuf>) -> Result<()> {
    let log = log
        .map(|p| {
            std::fs::File::create(&p)
                .map(std::io::BufWriter::new)
                .with_context(|| format!("creating {}", p.display()))
        })
        .transpose()?;
    let (cmd_tx, cmd_rx) = mpsc::channel();
    let (frame_tx, _) = broadcast::channel(256);
    let sim_frames = frame_tx.clone();
    std::thread::Builder::new()
        .name("sim".into())
        .spawn(move || run_session(session, cmd_rx, sim_frames, log))?;
    let state = AppState {
        commands: cmd_tx,
        frames: frame_tx,
        assets,
    };
    let app = Router::new()
        .route("/ws", get(ws_route))
        .fallback(static_file)
        .with_state(state);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(("127.0.0.1", port))
            .await
            .with_context(|| format!("binding port {port}"))?;
        let addr = listener.local_addr()?;
        info!("telemetry at ws://{addr}/ws");
        println!("listening on {addr}");
        std::io::stdout().flush()?;
        axum::serve(listener, app).await?;
        Ok(())
    })
}
