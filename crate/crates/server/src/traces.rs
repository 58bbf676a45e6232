//! Deterministic synthetic CHARCHA traces for fixtures and testing.

use std::str::FromStr;

use cadence_core::charcha::replay::{Trace, TraceHeader};
use cadence_core::charcha::synthetic::SyntheticDriver;
use cadence_core::charcha::{CharchaConfig, CharchaSession};

/// Frame interval of generated traces (10 Hz).
pub const TRACE_FRAME_INTERVAL_MS: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TracePlan {
    /// Every second of every window performs the action.
    Pass,
    /// Hits only in the last six seconds of each window: the pass boundary,
    /// observed over the full ten seconds.
    Boundary6,
    /// The last action hits only in its last five seconds, in both attempts.
    Score5,
    /// The first attempt fails at score five, the retry passes.
    RetryPass,
}

impl TracePlan {
    pub const ALL: [TracePlan; 4] = [TracePlan::Pass, TracePlan::Boundary6, TracePlan::Score5, TracePlan::RetryPass];

    pub fn name(self) -> &'static str {
        match self {
            TracePlan::Pass => "pass",
            TracePlan::Boundary6 => "boundary6",
            TracePlan::Score5 => "score5",
            TracePlan::RetryPass => "retry-pass",
        }
    }

    /// Whether the face performs during `second` of action `index`.
    pub fn performs(self, attempt: u8, index: usize, second: usize) -> bool {
        let last = index == cadence_core::charcha::ACTIONS_PER_ATTEMPT - 1;
        match self {
            TracePlan::Pass => true,
            TracePlan::Boundary6 => second >= 4,
            TracePlan::Score5 => !last || second >= 5,
            TracePlan::RetryPass => attempt > 1 || !last || second >= 5,
        }
    }

    pub fn expect_pass(self) -> bool {
        self != TracePlan::Score5
    }
}

impl FromStr for TracePlan {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        TracePlan::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown plan {s:?}; expected pass, boundary6, score5 or retry-pass"))
    }
}

/// Drives a fresh session with `plan` and records what a client would send.
pub fn synth_trace(seed: u64, plan: TracePlan, config: &CharchaConfig) -> Trace {
    let id = format!("synthetic-{}-{seed}", plan.name());
    let mut session = CharchaSession::new(id.clone(), seed, config.clone());
    let driver = SyntheticDriver {
        frame_interval_ms: TRACE_FRAME_INTERVAL_MS,
        ..SyntheticDriver::default()
    };
    let messages = driver.drive(&mut session, |a, i, _, sec| plan.performs(a, i, sec));
    Trace {
        header: Some(TraceHeader {
            seed,
            session_id: Some(id),
        }),
        messages,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cadence_core::charcha::replay::replay;

    #[test]
    fn plans_reach_their_verdicts() {
        let cfg = CharchaConfig::default();
        for plan in TracePlan::ALL {
            let t = synth_trace(11, plan, &cfg);
            let r = replay(&t, None, &cfg).unwrap();
            assert_eq!(r.verdict.passed, plan.expect_pass(), "{}", plan.name());
            let attempts = if matches!(plan, TracePlan::Score5 | TracePlan::RetryPass) { 2 } else { 1 };
            assert_eq!(r.attempts.len(), attempts, "{}", plan.name());
        }
    }

    #[test]
    fn plan_names_parse() {
        for p in TracePlan::ALL {
            assert_eq!(p.name().parse::<TracePlan>().unwrap(), p);
        }
        assert!("nope".parse::<TracePlan>().is_err());
    }
}
