//! HTTP and WebSocket routes. See `docs/http.md` for the full reference.

use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cadence_core::charcha::replay::{parse_trace, replay};
use cadence_core::charcha::wire::{parse_client_message, ServerMessage};
use cadence_render::evaluate::{reference_images, Evaluator};
use cadence_render::job::JobRequest;
use cadence_render::{JobProgress, Orchestrator};
use futures::{SinkExt, Stream, StreamExt};
use serde::Deserialize;
use tokio::sync::{watch, Semaphore};

use crate::error::{from_body_error, ApiError};
use crate::sessions::{SessionRegistry, Shared};

pub const SHUTDOWN_REASON: &str = "server shutdown";

#[derive(Clone)]
pub struct AppState {
    pub orchestrator: Arc<Orchestrator>,
    pub sessions: Arc<SessionRegistry>,
    job_slots: Arc<Semaphore>,
    shutdown: watch::Sender<bool>,
}

impl AppState {
    pub fn new(orchestrator: Arc<Orchestrator>) -> Self {
        let cfg = orchestrator.config();
        let sessions = SessionRegistry::new(
            orchestrator.archive().clone(),
            cfg.paths.traces_dir.clone(),
            cfg.charcha.clone(),
            cfg.session_ttl_secs,
        );
        Self {
            sessions: Arc::new(sessions),
            job_slots: Arc::new(Semaphore::new(2)),
            shutdown: watch::channel(false).0,
            orchestrator,
        }
    }

    /// Runs a job in the background, at most two at a time.
    pub fn spawn_job(&self, id: String) {
        let o = self.orchestrator.clone();
        let slots = self.job_slots.clone();
        tokio::spawn(async move {
            let _permit = slots.acquire_owned().await;
            if let Err(e) = o.run_job(&id).await {
                tracing::warn!(job = %id, error = %e, "job did not complete");
            }
        });
    }

    /// Restarts every job left unfinished by an earlier process.
    pub fn resume_unfinished(&self) -> usize {
        let jobs = self.orchestrator.store().list().unwrap_or_default();
        let mut n = 0;
        for j in jobs.into_iter().filter(|j| !j.status.is_terminal()) {
            self.spawn_job(j.id);
            n += 1;
        }
        n
    }

    /// Tells open sockets to end their sessions.
    pub fn begin_shutdown(&self) {
        self.shutdown.send_replace(true);
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(|| async { Json(serde_json::json!({ "status": "ok" })) }))
        .route("/jobs", post(create_job).get(list_jobs))
        .route("/jobs/{id}", get(get_job))
        .route("/jobs/{id}/events", get(job_events))
        .route("/jobs/{id}/manifest", get(get_manifest))
        .route("/jobs/{id}/frames/{index}", get(get_frame))
        .route("/jobs/{id}/eval", post(run_eval).get(get_eval))
        .route("/charcha/sessions", post(create_session))
        .route("/charcha/sessions/{id}", get(get_session))
        .route("/charcha/sessions/{id}/verdict", get(get_verdict))
        .route("/charcha/sessions/{id}/ws", get(session_socket))
        .route("/charcha/sessions/{id}/snapshots", get(list_snapshots))
        .route("/charcha/sessions/{id}/snapshots/{tag}", post(upload_snapshot).get(get_snapshot))
        .route("/charcha/sessions/{id}/jobs", post(create_session_job))
        .route("/charcha/replay", post(replay_trace))
        .with_state(state)
}

/// Serves until `signal` resolves, then ends live sessions with
/// "server shutdown" and waits for connections to drain.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    signal: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let app = router(state.clone());
    let s = state.clone();
    axum::serve(listener, app)
        .with_graceful_shutdown(async move {
            signal.await;
            tracing::info!("shutting down");
            s.begin_shutdown();
        })
        .await?;
    let n = state.sessions.drain(SHUTDOWN_REASON).await;
    if n > 0 {
        tracing::info!(sessions = n, "ended unfinished sessions");
    }
    Ok(())
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    if body.is_empty() {
        return Err(ApiError::bad_request("request body is empty"));
    }
    serde_json::from_slice(body).map_err(from_body_error)
}

#[derive(Deserialize)]
struct CreateJobQuery {
    id: Option<String>,
}

fn submit(state: &AppState, req: JobRequest, id: Option<String>) -> Result<Response, ApiError> {
    let job = state.orchestrator.submit_job(req, id)?;
    state.spawn_job(job.id.clone());
    let body = serde_json::json!({ "id": job.id, "status": job.status, "expected_frames": job.expected_frames });
    Ok((StatusCode::CREATED, [(header::LOCATION, format!("/jobs/{}", job.id))], Json(body)).into_response())
}

async fn create_job(
    State(state): State<AppState>,
    Query(q): Query<CreateJobQuery>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let req: JobRequest = parse_body(&body)?;
    submit(&state, req, q.id)
}

async fn create_session_job(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<CreateJobQuery>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let mut req: JobRequest = parse_body(&body)?;
    if req.character_session.as_deref().is_some_and(|s| s != id) {
        return Err(ApiError::field("character_session", "does not match the session in the path"));
    }
    req.character_session = Some(id);
    submit(&state, req, q.id)
}

async fn list_jobs(State(state): State<AppState>) -> Result<Json<Vec<JobProgress>>, ApiError> {
    let jobs = state
        .orchestrator
        .store()
        .list()
        .map_err(|e| ApiError::internal(e.to_string()))?;
    let mut out = Vec::with_capacity(jobs.len());
    for j in jobs {
        out.push(state.orchestrator.job_status(&j.id)?);
    }
    Ok(Json(out))
}

async fn get_job(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<serde_json::Value>, ApiError> {
    let job = state.orchestrator.job(&id)?;
    let progress = state.orchestrator.job_status(&id)?;
    Ok(Json(serde_json::json!({ "job": job, "progress": progress })))
}

/// Server-sent `progress` events until the job reaches a terminal state.
async fn job_events(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let first = state.orchestrator.job_status(&id)?;
    let rx = state.orchestrator.subscribe();
    let o = state.orchestrator.clone();
    let stream = futures::stream::unfold(
        (Some(first), rx, false, o, id),
        |(pending, mut rx, done, o, id)| async move {
            if done {
                return None;
            }
            let p = match pending {
                Some(p) => p,
                None => loop {
                    match tokio::time::timeout(Duration::from_secs(2), rx.recv()).await {
                        Ok(Ok(p)) if p.id == id => break p,
                        Ok(Ok(_)) => continue,
                        // lagged, closed or quiet: fall back to persisted state
                        _ => match o.job_status(&id) {
                            Ok(p) => break p,
                            Err(_) => return None,
                        },
                    }
                },
            };
            let terminal = p.status.is_terminal();
            let ev = Event::default()
                .event("progress")
                .json_data(&p)
                .unwrap_or_else(|_| Event::default());
            Some((Ok(ev), (None, rx, terminal, o, id)))
        },
    );
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

async fn get_manifest(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    match state.orchestrator.manifest(&id)? {
        Some(m) => Ok(Json(m).into_response()),
        None => Err(ApiError::conflict(format!("job {id} has not finished rendering"))),
    }
}

async fn get_frame(
    State(state): State<AppState>,
    Path((id, index)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    state.orchestrator.job(&id)?;
    let n: usize = index
        .trim_end_matches(".png")
        .parse()
        .map_err(|_| ApiError::field("index", "must be a frame number"))?;
    let path = state.orchestrator.store().frame_path(&id, n);
    match tokio::fs::read(&path).await {
        Ok(bytes) => Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response()),
        Err(_) => Err(ApiError::not_found(format!("frame {n} of job {id} not found"))),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalRequest {
    /// Directory (or single file) of reference PNGs on the server.
    #[serde(default)]
    references: Option<PathBuf>,
    /// Use a verified session's snapshots as references.
    #[serde(default)]
    session: Option<String>,
    #[serde(default)]
    participant: Option<String>,
}

async fn run_eval(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    state.orchestrator.job(&id)?;
    let req: EvalRequest = parse_body(&body)?;
    let refs = match (&req.references, &req.session) {
        (Some(_), Some(_)) => return Err(ApiError::bad_request("give either references or session, not both")),
        (Some(dir), None) => reference_images(dir).map_err(|e| ApiError::field("references", e.to_string()))?,
        (None, Some(sid)) => state.sessions.archive().consent(sid)?.snapshots,
        (None, None) => return Err(ApiError::field("references", "references or session is required")),
    };
    if refs.is_empty() {
        return Err(ApiError::field("references", "no reference images"));
    }
    let participant = req.participant.or(req.session).unwrap_or_else(|| "participant".into());
    let o = &state.orchestrator;
    let ev = Evaluator {
        store: o.store(),
        clients: o.clients(),
        workers: o.config().render.workers,
    };
    match ev.evaluate(&id, &refs, &participant).await {
        Ok(r) => Ok(Json(r).into_response()),
        Err(e @ cadence_render::evaluate::EvalRunError::NotRendered(_)) => Err(ApiError::conflict(e.to_string())),
        Err(e) => Err(ApiError::internal(e.to_string())),
    }
}

async fn get_eval(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    state.orchestrator.job(&id)?;
    let r: Option<serde_json::Value> = state
        .orchestrator
        .store()
        .read_artifact(&id, "eval/report.json")
        .map_err(|e| ApiError::internal(e.to_string()))?;
    r.map(|v| Json(v).into_response())
        .ok_or_else(|| ApiError::not_found(format!("job {id} has not been evaluated")))
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    #[serde(default)]
    seed: Option<u64>,
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateSession = if body.is_empty() { CreateSession::default() } else { parse_body(&body)? };
    let ticket = state.sessions.create(req.seed)?;
    Ok((StatusCode::CREATED, Json(ticket)).into_response())
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(state.sessions.view(&id).await?).into_response())
}

async fn get_verdict(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let v = state.sessions.view(&id).await?;
    match v.verdict {
        Some(verdict) => Ok(Json(verdict).into_response()),
        None => Err(ApiError::conflict(format!("session {id} has no verdict yet"))),
    }
}

#[derive(Deserialize)]
struct TokenQuery {
    token: Option<String>,
}

fn token_of(headers: &HeaderMap, q: &TokenQuery) -> String {
    headers
        .get("x-session-token")
        .and_then(|v| v.to_str().ok())
        .map(str::to_string)
        .or_else(|| q.token.clone())
        .unwrap_or_default()
}

async fn session_socket(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<TokenQuery>,
    headers: HeaderMap,
    ws: WebSocketUpgrade,
) -> Result<Response, ApiError> {
    let live = state.sessions.authorize(&id, &token_of(&headers, &q)).await?;
    {
        let mut l = live.lock().await;
        if l.session.is_terminal() {
            return Err(ApiError::conflict(format!("session {id} has already finished")));
        }
        if l.connected {
            return Err(ApiError::conflict(format!("session {id} already has a connection")));
        }
        l.connected = true;
    }
    Ok(ws.on_upgrade(move |socket| drive_socket(state, live, socket)))
}

async fn send_all(
    tx: &mut futures::stream::SplitSink<WebSocket, Message>,
    msgs: &[ServerMessage],
) -> Result<(), axum::Error> {
    for m in msgs {
        let text = serde_json::to_string(m).expect("server message serializes");
        tx.send(Message::Text(text.into())).await?;
    }
    Ok(())
}

async fn stopped(rx: &mut watch::Receiver<bool>) {
    let _ = rx.wait_for(|s| *s).await;
}

async fn drive_socket(state: AppState, live: Shared, socket: WebSocket) {
    let (mut tx, mut rx) = socket.split();
    let mut shutdown = state.shutdown.subscribe();
    let sessions = &state.sessions;
    let greeting = {
        let l = live.lock().await;
        vec![ServerMessage::Phase {
            attempt: l.session.attempt(),
            phase: l.session.phase().clone(),
            t_ms: 0,
        }]
    };
    let mut open = send_all(&mut tx, &greeting).await.is_ok();
    while open {
        let out = tokio::select! {
            msg = rx.next() => match msg {
                Some(Ok(Message::Text(text))) => match parse_client_message(&text) {
                    Ok(m) => sessions.apply(&mut *live.lock().await, &m),
                    Err(e) => vec![ServerMessage::Error { message: e.to_string() }],
                },
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => {
                    let mut l = live.lock().await;
                    sessions.finish(&mut l);
                    open = false;
                    Vec::new()
                }
                Some(Ok(_)) => Vec::new(),
            },
            _ = stopped(&mut shutdown) => sessions.abort(&mut *live.lock().await, SHUTDOWN_REASON),
        };
        if open && send_all(&mut tx, &out).await.is_err() {
            sessions.finish(&mut *live.lock().await);
            open = false;
        }
        if live.lock().await.session.is_terminal() {
            break;
        }
    }
    live.lock().await.connected = false;
    let _ = tx.send(Message::Close(None)).await;
}

async fn upload_snapshot(
    State(state): State<AppState>,
    Path((id, tag)): Path<(String, String)>,
    Query(q): Query<TokenQuery>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    state.sessions.authorize(&id, &token_of(&headers, &q)).await?;
    if body.is_empty() {
        return Err(ApiError::bad_request("snapshot body is empty"));
    }
    state.sessions.archive().upload_snapshot(&id, &tag, &body)?;
    Ok((StatusCode::CREATED, Json(serde_json::json!({ "session": id, "tag": tag }))).into_response())
}

async fn list_snapshots(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let tags: Vec<String> = state
        .sessions
        .archive()
        .snapshots(&id)?
        .iter()
        .filter_map(|p| p.file_stem().and_then(|s| s.to_str()).map(str::to_string))
        .collect();
    Ok(Json(serde_json::json!({ "session": id, "tags": tags })).into_response())
}

async fn get_snapshot(
    State(state): State<AppState>,
    Path((id, tag)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let path = state
        .sessions
        .archive()
        .snapshot_path(&id, &tag)
        .ok_or_else(|| ApiError::not_found(format!("snapshot {tag} of session {id} not found")))?;
    let bytes = tokio::fs::read(path).await.map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

#[derive(Deserialize)]
struct ReplayQuery {
    seed: Option<u64>,
}

/// Body: a newline-delimited trace.
async fn replay_trace(
    State(state): State<AppState>,
    Query(q): Query<ReplayQuery>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let text = std::str::from_utf8(&body).map_err(|_| ApiError::bad_request("trace is not UTF-8"))?;
    let trace = parse_trace(text).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let report = replay(&trace, q.seed, &state.orchestrator.config().charcha)
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(Json(report).into_response())
}
