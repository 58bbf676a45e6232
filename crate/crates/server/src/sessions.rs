//! Live CHARCHA sessions. Each session sits behind its own async mutex, so
//! frames for one session are applied strictly in order while sessions run
//! independently.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use cadence_core::charcha::replay::{Trace, TraceHeader};
use cadence_core::charcha::wire::{ClientMessage, ServerMessage};
use cadence_core::charcha::{CharchaConfig, CharchaSession, Phase, Verdict};
use cadence_render::archive::{ArchiveError, SessionArchive, SessionOutcome, SessionRecord};
use cadence_render::store::{unix_ms, write_atomic};
use serde::{Deserialize, Serialize};

use crate::error::ApiError;

pub struct LiveSession {
    pub session: CharchaSession,
    pub token: String,
    pub expires_unix_ms: u64,
    pub connected: bool,
    trace: Vec<ClientMessage>,
    persisted: bool,
}

/// Returned once at creation; the token is never shown again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTicket {
    pub id: String,
    pub token: String,
    pub seed: u64,
    pub expires_unix_ms: u64,
    pub ws_path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub phase: Phase,
    pub attempt: u8,
    pub verdict: Option<Verdict>,
}

pub type Shared = Arc<tokio::sync::Mutex<LiveSession>>;

pub struct SessionRegistry {
    live: Mutex<HashMap<String, Shared>>,
    archive: SessionArchive,
    traces_dir: PathBuf,
    config: CharchaConfig,
    ttl_ms: u64,
}

impl SessionRegistry {
    pub fn new(archive: SessionArchive, traces_dir: PathBuf, config: CharchaConfig, ttl_secs: u64) -> Self {
        Self {
            live: Mutex::new(HashMap::new()),
            archive,
            traces_dir,
            config,
            ttl_ms: ttl_secs.saturating_mul(1000),
        }
    }

    pub fn archive(&self) -> &SessionArchive {
        &self.archive
    }

    pub fn create(&self, seed: Option<u64>) -> Result<SessionTicket, ApiError> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let token = uuid::Uuid::new_v4().simple().to_string();
        let seed = seed.unwrap_or_else(|| uuid::Uuid::new_v4().as_u64_pair().0);
        let now = unix_ms();
        let expires_unix_ms = now.saturating_add(self.ttl_ms);
        self.archive.register(&SessionRecord {
            id: id.clone(),
            seed,
            created_unix_ms: now,
            expires_unix_ms,
        })?;
        let live = LiveSession {
            session: CharchaSession::new(id.clone(), seed, self.config.clone()),
            token: token.clone(),
            expires_unix_ms,
            connected: false,
            trace: Vec::new(),
            persisted: false,
        };
        self.live
            .lock()
            .expect("registry lock")
            .insert(id.clone(), Arc::new(tokio::sync::Mutex::new(live)));
        tracing::info!(session = %id, "charcha session created");
        Ok(SessionTicket {
            ws_path: format!("/charcha/sessions/{id}/ws"),
            id,
            token,
            seed,
            expires_unix_ms,
        })
    }

    pub fn get(&self, id: &str) -> Option<Shared> {
        self.live.lock().expect("registry lock").get(id).cloned()
    }

    /// Unknown ids are 404; wrong and expired tokens get the same 401.
    pub async fn authorize(&self, id: &str, token: &str) -> Result<Shared, ApiError> {
        let Some(s) = self.get(id) else {
            self.archive.record(id)?;
            // archived from an earlier process; its live state is gone
            return Err(ApiError::unauthorized());
        };
        {
            let l = s.lock().await;
            if l.token != token || unix_ms() > l.expires_unix_ms {
                return Err(ApiError::unauthorized());
            }
        }
        Ok(s)
    }

    /// Applies one client message, recording it in the trace, and persists
    /// the outcome once the session reaches a verdict.
    pub fn apply(&self, live: &mut LiveSession, msg: &ClientMessage) -> Vec<ServerMessage> {
        if live.session.is_terminal() {
            return Vec::new();
        }
        live.trace.push(msg.clone());
        let out = live.session.handle(msg);
        self.persist_if_done(live);
        out
    }

    pub fn finish(&self, live: &mut LiveSession) -> Vec<ServerMessage> {
        let out = live.session.finish();
        self.persist_if_done(live);
        out
    }

    pub fn abort(&self, live: &mut LiveSession, reason: &str) -> Vec<ServerMessage> {
        let out = live.session.abort(reason);
        self.persist_if_done(live);
        out
    }

    fn persist_if_done(&self, live: &mut LiveSession) {
        if live.persisted || !live.session.is_terminal() {
            return;
        }
        let Some(verdict) = live.session.verdict().cloned() else {
            return;
        };
        let id = live.session.id().to_string();
        let outcome = SessionOutcome {
            snapshots: live.session.passing_snapshots(),
            attempts: live.session.attempts().to_vec(),
            verdict,
        };
        if let Err(e) = self.archive.record_outcome(&id, &outcome) {
            tracing::error!(session = %id, error = %e, "cannot persist verdict");
            return;
        }
        let trace = Trace {
            header: Some(TraceHeader {
                seed: live.session.seed(),
                session_id: Some(id.clone()),
            }),
            messages: std::mem::take(&mut live.trace),
        };
        let path = self.traces_dir.join(format!("{id}.ndjson"));
        if let Err(e) = write_atomic(&path, trace.to_ndjson().as_bytes()) {
            tracing::warn!(session = %id, error = %e, "cannot write trace");
        }
        live.persisted = true;
        tracing::info!(session = %id, passed = outcome.verdict.passed, "charcha verdict");
    }

    /// Current view, from memory or from the archive for sessions of an
    /// earlier process.
    pub async fn view(&self, id: &str) -> Result<SessionView, ApiError> {
        if let Some(s) = self.get(id) {
            let l = s.lock().await;
            return Ok(SessionView {
                id: id.into(),
                phase: l.session.phase().clone(),
                attempt: l.session.attempt(),
                verdict: l.session.verdict().cloned(),
            });
        }
        match self.archive.outcome(id)? {
            Some(o) => Ok(SessionView {
                id: id.into(),
                phase: if o.verdict.passed {
                    Phase::Passed
                } else {
                    Phase::Failed {
                        reason: o.verdict.reason.clone().unwrap_or_default(),
                    }
                },
                attempt: o.verdict.attempt,
                verdict: Some(o.verdict),
            }),
            None => Err(ArchiveError::NotFound(id.into()).into()),
        }
    }

    /// Ends every unfinished session with `reason`. Returns how many were
    /// ended.
    pub async fn drain(&self, reason: &str) -> usize {
        let all: Vec<Shared> = self.live.lock().expect("registry lock").values().cloned().collect();
        let mut n = 0;
        for s in all {
            let mut l = s.lock().await;
            if !l.session.is_terminal() {
                self.abort(&mut l, reason);
                n += 1;
            }
        }
        n
    }
}
