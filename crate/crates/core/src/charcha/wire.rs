//! WebSocket message schema. Every message is one JSON object with a
//! `type` discriminator; see `docs/wire.md` for the field-by-field layout.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ActionKind, ActionScore, LandmarkFrame, Phase, Verdict};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Frame(LandmarkFrame),
    /// Advances the session clock without a frame.
    Tick { t_ms: u64 },
    /// Starts the second attempt after a failed first one.
    Retry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Phase {
        attempt: u8,
        phase: Phase,
        t_ms: u64,
    },
    Prompt {
        attempt: u8,
        index: usize,
        action: ActionKind,
        window_start_ms: u64,
        deadline_ms: u64,
    },
    SecondScore {
        attempt: u8,
        index: usize,
        action: ActionKind,
        second: usize,
        hit: bool,
    },
    CaptureRequest {
        attempt: u8,
        tag: String,
        t_ms: u64,
    },
    ActionScore {
        attempt: u8,
        index: usize,
        score: ActionScore,
    },
    AttemptResult {
        attempt: u8,
        passed: bool,
        scores: Vec<ActionScore>,
    },
    Verdict(Verdict),
    Error {
        message: String,
    },
}

#[derive(Debug, Error, PartialEq)]
pub enum WireError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("landmark {name}: {reason}")]
    Landmark { name: String, reason: String },
}

/// Parses and validates one client message. Coordinates must be finite with
/// x and y in `[0, 1]`.
pub fn parse_client_message(text: &str) -> Result<ClientMessage, WireError> {
    let msg: ClientMessage =
        serde_json::from_str(text).map_err(|e| WireError::Malformed(e.to_string()))?;
    if let ClientMessage::Frame(f) = &msg {
        validate_frame(f)?;
    }
    Ok(msg)
}

pub fn validate_frame(frame: &LandmarkFrame) -> Result<(), WireError> {
    for (name, p) in &frame.points {
        let bad = |reason: &str| WireError::Landmark {
            name: name.clone(),
            reason: reason.to_string(),
        };
        if p.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite coordinate"));
        }
        if !(0.0..=1.0).contains(&p[0]) || !(0.0..=1.0).contains(&p[1]) {
            return Err(bad("x and y must lie in [0, 1]"));
        }
    }
    Ok(())
}
