use serde::{Deserialize, Serialize};

use super::wire::{ClientMessage, ServerMessage};
use super::{
    calibrate, detect_action, score_action, select_actions, ActionKind, ActionScore,
    CalibrationProfile, DetectorThresholds, LandmarkFrame, SpoofConfig, SpoofTracker,
    ACTIONS_PER_ATTEMPT, FLAG_STREAM_GAP, PASS_SCORE, SECONDS_PER_WINDOW,
};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Timing {
    pub calibration_ms: u64,
    pub prepare_ms: u64,
    pub second_ms: u64,
    pub min_calibration_frames: usize,
    /// A second is a hit when at least this fraction of its frames detect.
    pub second_hit_fraction: f64,
    pub max_gap_ms: u64,
}

impl Default for Timing {
    fn default() -> Self {
        Self {
            calibration_ms: 2000,
            prepare_ms: 5000,
            second_ms: 1000,
            min_calibration_frames: 10,
            second_hit_fraction: 0.5,
            max_gap_ms: 3000,
        }
    }
}

impl Timing {
    /// Worst-case FSM time for one attempt after a successful calibration
    /// begins.
    pub fn attempt_bound_ms(&self) -> u64 {
        self.calibration_ms
            + ACTIONS_PER_ATTEMPT as u64 * (self.prepare_ms + SECONDS_PER_WINDOW as u64 * self.second_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CharchaConfig {
    pub thresholds: DetectorThresholds,
    pub timing: Timing,
    pub spoof: SpoofConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Calibrating,
    Prepare { index: usize },
    ActionWindow { index: usize },
    BetweenAttempts,
    Passed,
    Failed { reason: String },
}

impl Phase {
    pub fn is_terminal(&self) -> bool {
        matches!(self, Phase::Passed | Phase::Failed { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub attempt: u8,
    /// `"neutral"` or an action tag.
    pub tag: String,
    pub t_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub attempt: u8,
    pub actions: Vec<ActionKind>,
    pub scores: Vec<ActionScore>,
    pub passed: Option<bool>,
    /// Start of the calibration that succeeded.
    pub calibration_start_ms: Option<u64>,
    pub calibration_restarts: u8,
    pub profile: Option<CalibrationProfile>,
    pub end_ms: Option<u64>,
}

impl AttemptRecord {
    fn new(attempt: u8, actions: Vec<ActionKind>) -> Self {
        Self {
            attempt,
            actions,
            scores: Vec::new(),
            passed: None,
            calibration_start_ms: None,
            calibration_restarts: 0,
            profile: None,
            end_ms: None,
        }
    }

    /// FSM time from the successful calibration start to the attempt's end.
    pub fn duration_ms(&self) -> Option<u64> {
        Some(self.end_ms? - self.calibration_start_ms?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub passed: bool,
    pub reason: Option<String>,
    pub attempt: u8,
    pub scores: Vec<ActionScore>,
    pub spoof_flags: Vec<String>,
    pub t_ms: u64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    frames: u32,
    hits: u32,
}

#[derive(Debug, Clone)]
struct Window {
    start: u64,
    tallies: [Tally; SECONDS_PER_WINDOW],
    per_second: [bool; SECONDS_PER_WINDOW],
    finalized: usize,
    hits: usize,
    captured: bool,
    last_activity: u64,
}

/// One liveness session. Single writer: feed messages in order through
/// [`CharchaSession::handle`].
#[derive(Debug, Clone)]
pub struct CharchaSession {
    id: String,
    seed: u64,
    config: CharchaConfig,
    phase: Phase,
    phase_start: u64,
    attempt: u8,
    calibration_frames: Vec<LandmarkFrame>,
    window: Option<Window>,
    attempts: Vec<AttemptRecord>,
    snapshots: Vec<Snapshot>,
    spoof: SpoofTracker,
    last_t: Option<u64>,
    verdict: Option<Verdict>,
}

impl CharchaSession {
    pub fn new(id: impl Into<String>, seed: u64, config: CharchaConfig) -> Self {
        let spoof = SpoofTracker::new(config.spoof.clone());
        Self {
            id: id.into(),
            seed,
            config,
            phase: Phase::Idle,
            phase_start: 0,
            attempt: 1,
            calibration_frames: Vec::new(),
            window: None,
            attempts: vec![AttemptRecord::new(1, select_actions(seed))],
            snapshots: Vec::new(),
            spoof,
            last_t: None,
            verdict: None,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn phase(&self) -> &Phase {
        &self.phase
    }

    pub fn attempt(&self) -> u8 {
        self.attempt
    }

    pub fn actions(&self) -> &[ActionKind] {
        &self.current().actions
    }

    pub fn attempts(&self) -> &[AttemptRecord] {
        &self.attempts
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    /// Snapshots of the attempt that passed; empty unless the session passed.
    pub fn passing_snapshots(&self) -> Vec<Snapshot> {
        match &self.verdict {
            Some(v) if v.passed => self
                .snapshots
                .iter()
                .filter(|s| s.attempt == v.attempt)
                .cloned()
                .collect(),
            _ => Vec::new(),
        }
    }

    pub fn verdict(&self) -> Option<&Verdict> {
        self.verdict.as_ref()
    }

    pub fn is_terminal(&self) -> bool {
        self.phase.is_terminal()
    }

    pub fn handle(&mut self, msg: &ClientMessage) -> Vec<ServerMessage> {
        match msg {
            ClientMessage::Frame(f) => self.input(f.t_ms, Some(f)),
            ClientMessage::Tick { t_ms } => self.input(*t_ms, None),
            ClientMessage::Retry => self.retry(),
        }
    }

    pub fn step_frame(&mut self, frame: &LandmarkFrame) -> Vec<ServerMessage> {
        self.input(frame.t_ms, Some(frame))
    }

    pub fn tick(&mut self, t_ms: u64) -> Vec<ServerMessage> {
        self.input(t_ms, None)
    }

    /// Ends a session whose input stream stopped before a verdict.
    pub fn finish(&mut self) -> Vec<ServerMessage> {
        self.abort("stream ended")
    }

    pub fn abort(&mut self, reason: &str) -> Vec<ServerMessage> {
        let mut ev = Vec::new();
        if !self.is_terminal() {
            let t = self.last_t.unwrap_or(0);
            self.fail(t, reason, &mut ev);
        }
        ev
    }

    pub fn retry(&mut self) -> Vec<ServerMessage> {
        if self.phase != Phase::BetweenAttempts {
            return vec![ServerMessage::Error {
                message: "retry is only accepted between attempts".into(),
            }];
        }
        self.attempt = 2;
        let actions = select_actions(seed::derive_named(self.seed, "attempt-2"));
        self.attempts.push(AttemptRecord::new(2, actions));
        self.phase = Phase::Idle;
        vec![ServerMessage::Phase {
            attempt: 2,
            phase: Phase::Idle,
            t_ms: self.last_t.unwrap_or(0),
        }]
    }

    fn current(&self) -> &AttemptRecord {
        self.attempts.last().expect("at least one attempt")
    }

    fn current_mut(&mut self) -> &mut AttemptRecord {
        self.attempts.last_mut().expect("at least one attempt")
    }

    fn input(&mut self, t: u64, frame: Option<&LandmarkFrame>) -> Vec<ServerMessage> {
        let mut ev = Vec::new();
        if self.is_terminal() {
            return ev;
        }
        if let Some(last) = self.last_t {
            if t < last {
                self.fail(last, "clock violation", &mut ev);
                return ev;
            }
        }
        self.last_t = Some(t);
        if self.phase == Phase::BetweenAttempts {
            return ev;
        }
        if self.phase == Phase::Idle {
            self.begin_calibration(t, &mut ev);
        }
        self.advance(t, &mut ev);
        if self.is_terminal() || self.phase == Phase::BetweenAttempts {
            return ev;
        }
        if let Some(f) = frame {
            self.spoof.observe(f);
            self.absorb(f, &mut ev);
        }
        ev
    }

    fn set_phase(&mut self, phase: Phase, t: u64, ev: &mut Vec<ServerMessage>) {
        self.phase = phase.clone();
        self.phase_start = t;
        ev.push(ServerMessage::Phase {
            attempt: self.attempt,
            phase,
            t_ms: t,
        });
    }

    fn begin_calibration(&mut self, t: u64, ev: &mut Vec<ServerMessage>) {
        self.calibration_frames.clear();
        self.set_phase(Phase::Calibrating, t, ev);
    }

    /// Crosses every phase boundary at or before `t`.
    fn advance(&mut self, t: u64, ev: &mut Vec<ServerMessage>) {
        loop {
            match self.phase {
                Phase::Calibrating => {
                    let end = self.phase_start + self.config.timing.calibration_ms;
                    if t < end {
                        return;
                    }
                    self.finish_calibration(end, ev);
                }
                Phase::Prepare { index } => {
                    let end = self.phase_start + self.config.timing.prepare_ms;
                    if t < end {
                        return;
                    }
                    self.open_window(index, end, ev);
                }
                Phase::ActionWindow { index } => {
                    let w = self.window.as_ref().expect("window state in ActionWindow");
                    let second_end = w.start + (w.finalized as u64 + 1) * self.config.timing.second_ms;
                    if t < second_end {
                        return;
                    }
                    self.close_second(index, second_end, ev);
                }
                _ => return,
            }
        }
    }

    fn finish_calibration(&mut self, end: u64, ev: &mut Vec<ServerMessage>) {
        let min = self.config.timing.min_calibration_frames;
        match calibrate(&self.calibration_frames, min) {
            Ok(profile) => {
                let start = self.phase_start;
                let rec = self.current_mut();
                rec.profile = Some(profile);
                rec.calibration_start_ms = Some(start);
                self.capture("neutral", end, ev);
                self.open_prepare(0, end, ev);
            }
            Err(_) if self.current().calibration_restarts == 0 => {
                self.current_mut().calibration_restarts += 1;
                self.begin_calibration(end, ev);
            }
            Err(_) => self.fail(end, "no stable face", ev),
        }
    }

    fn open_prepare(&mut self, index: usize, t: u64, ev: &mut Vec<ServerMessage>) {
        let timing = &self.config.timing;
        let window_start = t + timing.prepare_ms;
        let deadline = window_start + SECONDS_PER_WINDOW as u64 * timing.second_ms;
        let action = self.current().actions[index];
        self.set_phase(Phase::Prepare { index }, t, ev);
        ev.push(ServerMessage::Prompt {
            attempt: self.attempt,
            index,
            action,
            window_start_ms: window_start,
            deadline_ms: deadline,
        });
    }

    fn open_window(&mut self, index: usize, t: u64, ev: &mut Vec<ServerMessage>) {
        self.window = Some(Window {
            start: t,
            tallies: [Tally::default(); SECONDS_PER_WINDOW],
            per_second: [false; SECONDS_PER_WINDOW],
            finalized: 0,
            hits: 0,
            captured: false,
            last_activity: t,
        });
        self.set_phase(Phase::ActionWindow { index }, t, ev);
    }

    fn close_second(&mut self, index: usize, second_end: u64, ev: &mut Vec<ServerMessage>) {
        let fraction = self.config.timing.second_hit_fraction;
        let max_gap = self.config.timing.max_gap_ms;
        let action = self.current().actions[index];
        let w = self.window.as_mut().expect("window state");
        let k = w.finalized;
        let tally = w.tallies[k];
        let hit = tally.frames > 0 && tally.hits as f64 >= fraction * tally.frames as f64;
        w.per_second[k] = hit;
        w.finalized += 1;
        if hit {
            w.hits += 1;
        }
        let gap = second_end - w.last_activity > max_gap;
        let done = w.hits >= PASS_SCORE as usize || w.finalized == SECONDS_PER_WINDOW;
        let per_second = w.per_second;
        if gap {
            self.spoof.raise(FLAG_STREAM_GAP);
        }
        ev.push(ServerMessage::SecondScore {
            attempt: self.attempt,
            index,
            action,
            second: k,
            hit,
        });
        if done {
            self.close_window(index, action, per_second, second_end, ev);
        }
    }

    fn close_window(
        &mut self,
        index: usize,
        action: ActionKind,
        per_second: [bool; SECONDS_PER_WINDOW],
        end: u64,
        ev: &mut Vec<ServerMessage>,
    ) {
        self.window = None;
        let score = score_action(action, per_second);
        ev.push(ServerMessage::ActionScore {
            attempt: self.attempt,
            index,
            score: score.clone(),
        });
        self.current_mut().scores.push(score);
        if index + 1 < ACTIONS_PER_ATTEMPT {
            self.open_prepare(index + 1, end, ev);
        } else {
            self.close_attempt(end, ev);
        }
    }

    fn close_attempt(&mut self, end: u64, ev: &mut Vec<ServerMessage>) {
        let attempt = self.attempt;
        let rec = self.current_mut();
        let passed = rec.scores.iter().all(|s| s.passed);
        rec.passed = Some(passed);
        rec.end_ms = Some(end);
        let scores = rec.scores.clone();
        ev.push(ServerMessage::AttemptResult {
            attempt,
            passed,
            scores: scores.clone(),
        });
        if passed {
            self.phase = Phase::Passed;
            self.emit_verdict(true, None, end, ev);
        } else if attempt == 1 {
            self.set_phase(Phase::BetweenAttempts, end, ev);
        } else {
            self.phase = Phase::Failed {
                reason: "challenge failed".into(),
            };
            self.emit_verdict(false, Some("challenge failed".into()), end, ev);
        }
    }

    fn fail(&mut self, t: u64, reason: &str, ev: &mut Vec<ServerMessage>) {
        self.window = None;
        let rec = self.current_mut();
        rec.passed.get_or_insert(false);
        rec.end_ms.get_or_insert(t);
        self.phase = Phase::Failed {
            reason: reason.to_string(),
        };
        self.emit_verdict(false, Some(reason.to_string()), t, ev);
    }

    fn emit_verdict(&mut self, passed: bool, reason: Option<String>, t: u64, ev: &mut Vec<ServerMessage>) {
        let v = Verdict {
            passed,
            reason,
            attempt: self.attempt,
            scores: self.current().scores.clone(),
            spoof_flags: self.spoof.flags(),
            t_ms: t,
        };
        self.verdict = Some(v.clone());
        ev.push(ServerMessage::Verdict(v));
    }

    fn capture(&mut self, tag: &str, t: u64, ev: &mut Vec<ServerMessage>) {
        self.snapshots.push(Snapshot {
            attempt: self.attempt,
            tag: tag.to_string(),
            t_ms: t,
        });
        ev.push(ServerMessage::CaptureRequest {
            attempt: self.attempt,
            tag: tag.to_string(),
            t_ms: t,
        });
    }

    fn absorb(&mut self, frame: &LandmarkFrame, ev: &mut Vec<ServerMessage>) {
        match self.phase {
            Phase::Calibrating => self.calibration_frames.push(frame.clone()),
            Phase::ActionWindow { index } => {
                let action = self.current().actions[index];
                let profile = self.current().profile.expect("calibrated before any window");
                let detected = detect_action(frame, &profile, action, &self.config.thresholds);
                let max_gap = self.config.timing.max_gap_ms;
                let w = self.window.as_mut().expect("window state");
                if frame.t_ms - w.last_activity > max_gap {
                    self.spoof.raise(FLAG_STREAM_GAP);
                }
                w.last_activity = frame.t_ms;
                let tally = &mut w.tallies[w.finalized];
                tally.frames += 1;
                let first_hit = detected && !w.captured;
                if detected {
                    tally.hits += 1;
                    w.captured = true;
                }
                if first_hit {
                    self.capture(action.tag(), frame.t_ms, ev);
                }
            }
            _ => {}
        }
    }
}
