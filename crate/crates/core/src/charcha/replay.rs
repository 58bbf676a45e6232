//! Offline replay of recorded sessions. A trace is newline-delimited JSON:
//! an optional `{"type":"session","seed":..}` header followed by client
//! messages exactly as sent over the socket.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::wire::{validate_frame, ClientMessage};
use super::{AttemptRecord, CharchaConfig, CharchaSession, Snapshot, Verdict};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub seed: u64,
    #[serde(default)]
    pub session_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub header: Option<TraceHeader>,
    pub messages: Vec<ClientMessage>,
}

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("trace line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trace has no session header; a seed must be given")]
    MissingSeed,
}

#[derive(Serialize)]
struct HeaderLine<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    #[serde(flatten)]
    header: &'a TraceHeader,
}

impl Trace {
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        if let Some(h) = &self.header {
            let line = HeaderLine {
                kind: "session",
                header: h,
            };
            out.push_str(&serde_json::to_string(&line).expect("header serializes"));
            out.push('\n');
        }
        for m in &self.messages {
            out.push_str(&serde_json::to_string(m).expect("message serializes"));
            out.push('\n');
        }
        out
    }
}

/// Line numbers in errors are 1-based.
pub fn parse_trace(text: &str) -> Result<Trace, TraceError> {
    let mut trace = Trace::default();
    let mut seen_content = false;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let err = |message: String| TraceError::Parse { line, message };
        let value: serde_json::Value = serde_json::from_str(raw).map_err(|e| err(e.to_string()))?;
        if value.get("type").and_then(|t| t.as_str()) == Some("session") {
            if seen_content {
                return Err(err("session header must be the first line".into()));
            }
            let header: TraceHeader = serde_json::from_value(value).map_err(|e| err(e.to_string()))?;
            trace.header = Some(header);
            seen_content = true;
            continue;
        }
        seen_content = true;
        let msg: ClientMessage = serde_json::from_value(value).map_err(|e| err(e.to_string()))?;
        if let ClientMessage::Frame(f) = &msg {
            validate_frame(f).map_err(|e| err(e.to_string()))?;
        }
        trace.messages.push(msg);
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub session_id: String,
    pub seed: u64,
    pub verdict: Verdict,
    pub attempts: Vec<AttemptRecord>,
    pub snapshots: Vec<Snapshot>,
    pub messages: usize,
}

/// Pure function of `(trace, seed, config)`. An explicit `seed` overrides the
/// header. A trace that stops before a verdict fails with "stream ended".
pub fn replay(trace: &Trace, seed: Option<u64>, config: &CharchaConfig) -> Result<ReplayReport, TraceError> {
    let seed = seed
        .or(trace.header.as_ref().map(|h| h.seed))
        .ok_or(TraceError::MissingSeed)?;
    let id = trace
        .header
        .as_ref()
        .and_then(|h| h.session_id.clone())
        .unwrap_or_else(|| "replay".to_string());
    let mut session = CharchaSession::new(id.clone(), seed, config.clone());
    for m in &trace.messages {
        session.handle(m);
        if session.is_terminal() {
            break;
        }
    }
    session.finish();
    Ok(ReplayReport {
        session_id: id,
        seed,
        verdict: session.verdict().cloned().expect("finished session has a verdict"),
        attempts: session.attempts().to_vec(),
        snapshots: session.snapshots().to_vec(),
        messages: trace.messages.len(),
    })
}
