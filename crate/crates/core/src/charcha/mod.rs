//! Challenge-response facial liveness protocol.
//!
//! The client streams semantic facial landmarks; the engine calibrates a
//! neutral pose, prompts six of seven actions in random order, scores each
//! over ten one-second sub-intervals and issues a verdict with one retry.
//! Everything runs on the clock carried by the input messages, so a recorded
//! trace replays to an identical result.

mod detect;
mod landmarks;
pub mod replay;
mod session;
mod spoof;
pub mod synthetic;
pub mod wire;

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use detect::{detect_action, DetectorThresholds};
pub use landmarks::{
    calibrate, CalibrationError, CalibrationProfile, FaceMeasures, LandmarkFrame, REQUIRED_LANDMARKS,
};
pub use session::{
    AttemptRecord, CharchaConfig, CharchaSession, Phase, Snapshot, Timing, Verdict,
};
pub use spoof::{SpoofConfig, SpoofTracker, FLAG_FACE_SWAP, FLAG_INTERMITTENT, FLAG_STATIC, FLAG_STREAM_GAP};

pub const ACTIONS_PER_ATTEMPT: usize = 6;
pub const SECONDS_PER_WINDOW: usize = 10;
pub const PASS_SCORE: u8 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    TurnLeft,
    TurnRight,
    LookUp,
    Smile,
    OpenMouth,
    RaiseEyebrows,
    Wink,
}

impl ActionKind {
    pub const ALL: [ActionKind; 7] = [
        ActionKind::TurnLeft,
        ActionKind::TurnRight,
        ActionKind::LookUp,
        ActionKind::Smile,
        ActionKind::OpenMouth,
        ActionKind::RaiseEyebrows,
        ActionKind::Wink,
    ];

    /// Wire name, also used as the snapshot tag.
    pub fn tag(self) -> &'static str {
        match self {
            Self::TurnLeft => "turn_left",
            Self::TurnRight => "turn_right",
            Self::LookUp => "look_up",
            Self::Smile => "smile",
            Self::OpenMouth => "open_mouth",
            Self::RaiseEyebrows => "raise_eyebrows",
            Self::Wink => "wink",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.tag() == tag)
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Six distinct actions: a seeded shuffle of all seven, first six kept.
pub fn select_actions(seed: u64) -> Vec<ActionKind> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all = ActionKind::ALL;
    all.shuffle(&mut rng);
    all[..ACTIONS_PER_ATTEMPT].to_vec()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionScore {
    pub action: ActionKind,
    pub per_second: Vec<bool>,
    pub score: u8,
    pub passed: bool,
}

/// Seconds not observed (early termination) must be passed as `false`.
pub fn score_action(action: ActionKind, per_second: [bool; SECONDS_PER_WINDOW]) -> ActionScore {
    let score = per_second.iter().filter(|&&b| b).count() as u8;
    ActionScore {
        action,
        per_second: per_second.to_vec(),
        score,
        passed: score >= PASS_SCORE,
    }
}
