//! Synthetic faces and a closed-loop landmark driver. The driver answers
//! prompts like a client would, so it can produce traces for any scoring
//! pattern without a camera.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::wire::{ClientMessage, ServerMessage};
use super::{ActionKind, CalibrationProfile, CharchaSession, LandmarkFrame, Phase, SECONDS_PER_WINDOW};

/// Measures of [`neutral_face`].
pub const NEUTRAL: CalibrationProfile = CalibrationProfile {
    neutral_yaw: 0.0,
    neutral_pitch: 0.5,
    mouth_aspect_ratio: 0.1,
    eye_aspect_ratio: [1.0 / 3.0, 1.0 / 3.0],
    brow_distance: [0.25, 0.25],
    smile_width: 0.5,
    interocular: 0.2,
    frames_used: 1,
};

const NEUTRAL_POINTS: [(&str, f64, f64); 18] = [
    ("nose_tip", 0.50, 0.50),
    ("chin", 0.50, 0.72),
    ("left_eye_outer", 0.40, 0.40),
    ("left_eye_inner", 0.46, 0.40),
    ("right_eye_outer", 0.60, 0.40),
    ("right_eye_inner", 0.54, 0.40),
    ("left_eye_upper", 0.43, 0.39),
    ("left_eye_lower", 0.43, 0.41),
    ("right_eye_upper", 0.57, 0.39),
    ("right_eye_lower", 0.57, 0.41),
    ("mouth_left", 0.45, 0.60),
    ("mouth_right", 0.55, 0.60),
    ("upper_lip", 0.50, 0.595),
    ("lower_lip", 0.50, 0.605),
    ("left_brow", 0.43, 0.35),
    ("right_brow", 0.57, 0.35),
    ("face_left", 0.32, 0.50),
    ("face_right", 0.68, 0.50),
];

pub fn neutral_face(t_ms: u64) -> LandmarkFrame {
    LandmarkFrame {
        t_ms,
        face_present: true,
        points: NEUTRAL_POINTS
            .iter()
            .map(|(n, x, y)| (n.to_string(), [*x, *y, 0.0]))
            .collect::<BTreeMap<_, _>>(),
    }
}

/// Neutral face, or one clearly performing `action`.
pub fn posed_face(t_ms: u64, action: Option<ActionKind>) -> LandmarkFrame {
    let mut f = neutral_face(t_ms);
    let mut shift = |name: &str, dx: f64, dy: f64| {
        let p = f.points.get_mut(name).expect("neutral point");
        p[0] += dx;
        p[1] += dy;
    };
    match action {
        None => {}
        Some(ActionKind::TurnLeft) => shift("nose_tip", -0.07, 0.0),
        Some(ActionKind::TurnRight) => shift("nose_tip", 0.07, 0.0),
        Some(ActionKind::LookUp) => shift("nose_tip", 0.0, -0.06),
        Some(ActionKind::Smile) => {
            shift("mouth_left", -0.015, -0.005);
            shift("mouth_right", 0.015, -0.005);
        }
        Some(ActionKind::OpenMouth) => {
            shift("upper_lip", 0.0, -0.015);
            shift("lower_lip", 0.0, 0.015);
        }
        Some(ActionKind::RaiseEyebrows) => {
            shift("left_brow", 0.0, -0.02);
            shift("right_brow", 0.0, -0.02);
        }
        Some(ActionKind::Wink) => shift("left_eye_upper", 0.0, 0.016),
    }
    f
}

/// Adds isotropic Gaussian noise to x and y, clamped to the unit square.
pub fn jittered(frame: &LandmarkFrame, sigma: f64, rng: &mut impl Rng) -> LandmarkFrame {
    let mut f = frame.clone();
    if sigma <= 0.0 {
        return f;
    }
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    for p in f.points.values_mut() {
        p[0] = (p[0] + normal.sample(rng)).clamp(0.0, 1.0);
        p[1] = (p[1] + normal.sample(rng)).clamp(0.0, 1.0);
    }
    f
}

#[derive(Debug, Clone)]
pub struct SyntheticDriver {
    pub frame_interval_ms: u64,
    pub jitter_sigma: f64,
    pub jitter_seed: u64,
    /// Sends `retry` as soon as the first attempt fails.
    pub auto_retry: bool,
    /// Stop feeding frames at this FSM time even without a verdict.
    pub stop_at_ms: u64,
}

impl Default for SyntheticDriver {
    fn default() -> Self {
        Self {
            frame_interval_ms: 50,
            jitter_sigma: 0.001,
            jitter_seed: 7,
            auto_retry: true,
            stop_at_ms: 400_000,
        }
    }
}

impl SyntheticDriver {
    /// Feeds frames until a verdict (or `stop_at_ms`) and returns every
    /// message sent. `perform(attempt, index, action, second)` decides whether
    /// the face performs the prompted action during that second.
    pub fn drive(
        &self,
        session: &mut CharchaSession,
        mut perform: impl FnMut(u8, usize, ActionKind, usize) -> bool,
    ) -> Vec<ClientMessage> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.jitter_seed);
        let mut sent = Vec::new();
        // (attempt, index, action, window start, second length)
        let mut prompt: Option<(u8, usize, ActionKind, u64, u64)> = None;
        let mut t = 0;
        while !session.is_terminal() && t <= self.stop_at_ms {
            let pose = match prompt {
                Some((a, i, act, start, sec)) if t >= start => {
                    let second = ((t - start) / sec) as usize;
                    (second < SECONDS_PER_WINDOW && perform(a, i, act, second)).then_some(act)
                }
                _ => None,
            };
            let msg = ClientMessage::Frame(jittered(&posed_face(t, pose), self.jitter_sigma, &mut rng));
            for ev in session.handle(&msg) {
                match ev {
                    ServerMessage::Prompt {
                        attempt,
                        index,
                        action,
                        window_start_ms,
                        deadline_ms,
                    } => {
                        let sec = (deadline_ms - window_start_ms) / SECONDS_PER_WINDOW as u64;
                        prompt = Some((attempt, index, action, window_start_ms, sec));
                    }
                    ServerMessage::AttemptResult { .. } => prompt = None,
                    _ => {}
                }
            }
            sent.push(msg);
            if self.auto_retry && session.phase() == &Phase::BetweenAttempts {
                session.handle(&ClientMessage::Retry);
                sent.push(ClientMessage::Retry);
            }
            t += self.frame_interval_ms;
        }
        sent
    }
}
