//! HTTP front end: query API, live WebSocket and dashboard assets.
//!
//! Routes:
//!
//! - `GET /api/...` runs [`query_api`]. The access key comes from the `key`
//!   query parameter, an `X-Access-Key` header or `Authorization: Bearer`.
//! - `GET /live?app=ID&key=KEY` upgrades to a WebSocket. The server pushes
//!   `{"type":"uplink", ...}` for every stored record of that application and
//!   answers `{"type":"command","id":N,"command":{...}}` with
//!   `{"type":"ack","id":N, ...}`.
//! - `GET /dashboard` serves the dashboard build, unless headless.

use std::fs::File;
use std::future::Future;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use axum::extract::ws::{CloseFrame, Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, State};
use axum::http::{HeaderMap, StatusCode, Uri};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::net::TcpListener;
use tower_http::services::ServeDir;

use crate::server::{query_api, ApiRequest, LiveEvent, RecordStore};
use crate::sim::{
    lock, ControlAck, ControlCommand, ControlError, EventLog, Scenario, ScenarioError, SharedServer, Simulation,
};

pub const DEFAULT_PORT: u16 = 3000;
/// Wall-clock interval between simulation clock advances.
pub const CLOCK_TICK: Duration = Duration::from_millis(50);

pub type SharedSim = Arc<Mutex<Simulation>>;

pub fn lock_sim(sim: &SharedSim) -> MutexGuard<'_, Simulation> {
    sim.lock().unwrap_or_else(|p| p.into_inner())
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot bind port {port}: {error}")]
    Bind { port: u16, error: std::io::Error },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub port: u16,
    /// Sim seconds per wall second.
    pub speed: f64,
    pub dashboard: Dashboard,
    /// Directory for `uplinks.jsonl` and `events.jsonl`; in memory if None.
    pub out: Option<PathBuf>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self { port: DEFAULT_PORT, speed: 1.0, dashboard: Dashboard::default(), out: None }
    }
}

/// Build an open-ended simulation for serve mode. Files in `out` are
/// started afresh, since the nodes' frame counters restart too.
pub fn open_simulation(scenario: &Scenario, out: Option<&Path>) -> Result<Simulation, ServeError> {
    let Some(out) = out else {
        return Ok(Simulation::new(scenario, RecordStore::in_memory(), EventLog::in_memory(), true)?);
    };
    std::fs::create_dir_all(out)?;
    let uplinks = out.join("uplinks.jsonl");
    if uplinks.exists() {
        std::fs::remove_file(&uplinks)?;
    }
    let store = RecordStore::open(&uplinks)?;
    let log = EventLog::to_file(File::create(out.join("events.jsonl"))?, false);
    Ok(Simulation::new(scenario, store, log, true)?)
}

/// Run serve mode until `shutdown` resolves, then flush everything to disk.
pub async fn serve(
    scenario: &Scenario,
    opts: &ServeOptions,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServeError> {
    let sim = Arc::new(Mutex::new(open_simulation(scenario, opts.out.as_deref())?));
    let listener = bind(opts.port).await?;
    log::info!("servidor ligado na porta: {}", listener.local_addr()?.port());
    let clock = tokio::spawn(drive_clock(Arc::clone(&sim), opts.speed, CLOCK_TICK));
    let app = router(AppState::attached(Arc::clone(&sim)), &opts.dashboard);
    let result = axum::serve(listener, app).with_graceful_shutdown(shutdown).await;
    clock.abort();
    let mut sim = lock_sim(&sim);
    sim.flush()?;
    log::info!("stopped at sim time {:.1} s; {} records stored", sim.now(), lock(sim.shared()).store().len());
    Ok(result?)
}

#[derive(Clone)]
pub struct AppState {
    pub server: SharedServer,
    /// None when the server runs without a simulation; commands then fail
    /// as unavailable.
    pub sim: Option<SharedSim>,
}

impl AppState {
    pub fn attached(sim: SharedSim) -> Self {
        let server = lock_sim(&sim).server();
        Self { server, sim: Some(sim) }
    }

    pub fn detached(server: SharedServer) -> Self {
        Self { server, sim: None }
    }
}

/// Where `/dashboard` comes from.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Dashboard {
    /// API only.
    Headless,
    /// A built dashboard directory.
    Dir(PathBuf),
    /// A minimal page pointing at the API.
    #[default]
    Placeholder,
}

const PLACEHOLDER: &str = "<!doctype html>\n<html><head><meta charset=\"utf-8\"><title>firewatch</title></head>\n<body><h1>firewatch</h1><p>No dashboard build configured. The API is under <code>/api</code> and live updates under <code>/live</code>.</p></body></html>\n";

pub fn router(state: AppState, dashboard: &Dashboard) -> Router {
    let mut app = Router::new().route("/live", get(live)).fallback(api);
    match dashboard {
        Dashboard::Headless => {}
        Dashboard::Dir(dir) => {
            app = app.nest_service("/dashboard", ServeDir::new(dir).append_index_html_on_directories(true))
        }
        Dashboard::Placeholder => app = app.route("/dashboard", get(|| async { Html(PLACEHOLDER) })),
    }
    app.with_state(state)
}

pub async fn bind(port: u16) -> Result<TcpListener, ServeError> {
    let addr = SocketAddr::from(([0, 0, 0, 0], port));
    TcpListener::bind(addr).await.map_err(|error| ServeError::Bind { port, error })
}

fn header_key(headers: &HeaderMap) -> Option<String> {
    if let Some(v) = headers.get("x-access-key").and_then(|v| v.to_str().ok()) {
        return Some(v.to_string());
    }
    let auth = headers.get("authorization")?.to_str().ok()?;
    auth.strip_prefix("Bearer ").map(|s| s.trim().to_string())
}

async fn api(State(state): State<AppState>, uri: Uri, headers: HeaderMap) -> Response {
    if !uri.path().starts_with("/api") {
        return (StatusCode::NOT_FOUND, Json(serde_json::json!({ "error": "not found" }))).into_response();
    }
    let target = uri.path_and_query().map(|p| p.as_str()).unwrap_or("/");
    let mut req = ApiRequest::get(target);
    req.key = header_key(&headers);
    let resp = query_api(&lock(&state.server), &req);
    let status = StatusCode::from_u16(resp.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, Json(resp.body)).into_response()
}

#[derive(Debug, Deserialize)]
struct LiveParams {
    app: Option<String>,
    key: Option<String>,
}

/// Messages pushed to a live client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Uplink(LiveEvent),
    Ack {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<u64>,
        #[serde(flatten)]
        ack: ControlAck,
    },
    Error {
        message: String,
    },
}

/// Messages a live client may send.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Command {
        #[serde(default)]
        id: Option<u64>,
        command: ControlCommand,
    },
}

async fn live(
    State(state): State<AppState>,
    Query(params): Query<LiveParams>,
    headers: HeaderMap,
    ws: WebSocketUpgrade,
) -> Response {
    let Some(app) = params.app else {
        return (StatusCode::BAD_REQUEST, Json(serde_json::json!({ "error": "app is required" }))).into_response();
    };
    let key = params.key.or_else(|| header_key(&headers));
    let Some((id, rx)) = lock(&state.server).subscribe(&app, key.as_deref()) else {
        return (StatusCode::UNAUTHORIZED, Json(serde_json::json!({ "error": "missing or invalid access key" })))
            .into_response();
    };
    log::info!("live subscriber {id} joined app {app}");
    ws.on_upgrade(move |socket| live_session(socket, state, id, rx))
}

async fn send(socket: &mut WebSocket, msg: &ServerMessage) -> bool {
    let text = serde_json::to_string(msg).expect("server message serializes");
    socket.send(Message::Text(text.into())).await.is_ok()
}

async fn live_session(mut socket: WebSocket, state: AppState, id: u64, mut rx: crate::server::Subscription) {
    loop {
        tokio::select! {
            ev = rx.recv() => {
                let Some(ev) = ev else {
                    let close = CloseFrame { code: 1008, reason: "subscriber fell behind".into() };
                    let _ = socket.send(Message::Close(Some(close))).await;
                    break;
                };
                if !send(&mut socket, &ServerMessage::Uplink(ev)).await {
                    break;
                }
            }
            msg = socket.recv() => {
                let text = match msg {
                    Some(Ok(Message::Text(t))) => t,
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                    Some(Ok(_)) => continue,
                };
                let reply = match serde_json::from_str::<ClientMessage>(&text) {
                    Ok(ClientMessage::Command { id, command }) => {
                        ServerMessage::Ack { id, ack: control(&state, command) }
                    }
                    Err(e) => ServerMessage::Error { message: e.to_string() },
                };
                if !send(&mut socket, &reply).await {
                    break;
                }
            }
        }
    }
    lock(&state.server).live().unsubscribe(id);
    log::info!("live subscriber {id} left");
}

/// Apply a steering command to the attached simulation.
pub fn control(state: &AppState, cmd: ControlCommand) -> ControlAck {
    let Some(sim) = &state.sim else {
        return ControlAck::failed(cmd.name(), 0.0, &ControlError::Unavailable);
    };
    let mut sim = lock_sim(sim);
    let step = match cmd {
        ControlCommand::Step { dt_s } => Some(dt_s),
        _ => None,
    };
    let ack = sim.command(cmd);
    if let (true, Some(dt)) = (ack.ok, step) {
        let t = sim.now() + dt;
        sim.run_until(t);
    }
    ack
}

/// Advance the simulation with the wall clock, `speed` sim seconds per
/// wall second, until the task is dropped.
pub async fn drive_clock(sim: SharedSim, speed: f64, tick: Duration) {
    let mut interval = tokio::time::interval(tick);
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    let mut last = Instant::now();
    loop {
        interval.tick().await;
        let now = Instant::now();
        let wall = now.duration_since(last).as_secs_f64();
        last = now;
        let mut sim = lock_sim(&sim);
        if !sim.paused() {
            let t = sim.now() + wall * speed;
            sim.run_until(t);
        }
    }
}
