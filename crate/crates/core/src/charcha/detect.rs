use serde::{Deserialize, Serialize};

use super::{ActionKind, CalibrationProfile, FaceMeasures, LandmarkFrame};

/// Calibration-relative detector thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorThresholds {
    /// Absolute yaw offset from neutral, interocular units.
    pub yaw_offset: f64,
    /// Upward pitch offset from neutral, interocular units.
    pub pitch_offset: f64,
    pub smile_width_ratio: f64,
    pub open_mouth_ratio: f64,
    pub brow_raise_ratio: f64,
    pub wink_closed_ratio: f64,
    pub wink_open_ratio: f64,
}

impl Default for DetectorThresholds {
    fn default() -> Self {
        Self {
            yaw_offset: 0.25,
            pitch_offset: 0.20,
            smile_width_ratio: 1.15,
            open_mouth_ratio: 2.0,
            brow_raise_ratio: 1.25,
            wink_closed_ratio: 0.45,
            wink_open_ratio: 0.8,
        }
    }
}

/// Faceless or incomplete frames never detect anything.
pub fn detect_action(
    frame: &LandmarkFrame,
    profile: &CalibrationProfile,
    kind: ActionKind,
    th: &DetectorThresholds,
) -> bool {
    let Some(m) = FaceMeasures::from_frame(frame) else {
        return false;
    };
    let yaw = m.yaw - profile.neutral_yaw;
    let mar = m.mouth_aspect_ratio / profile.mouth_aspect_ratio;
    let ear = [
        m.eye_aspect_ratio[0] / profile.eye_aspect_ratio[0],
        m.eye_aspect_ratio[1] / profile.eye_aspect_ratio[1],
    ];
    let winks = |closed: usize, open: usize| ear[closed] <= th.wink_closed_ratio && ear[open] >= th.wink_open_ratio;
    match kind {
        // image y grows downward, so looking up shrinks the nose-to-eye-line offset
        ActionKind::TurnLeft => yaw <= -th.yaw_offset,
        ActionKind::TurnRight => yaw >= th.yaw_offset,
        ActionKind::LookUp => m.pitch <= profile.neutral_pitch - th.pitch_offset,
        ActionKind::Smile => {
            m.smile_width >= th.smile_width_ratio * profile.smile_width && mar < th.open_mouth_ratio
        }
        ActionKind::OpenMouth => mar >= th.open_mouth_ratio,
        ActionKind::RaiseEyebrows => {
            m.brow_distance[0] >= th.brow_raise_ratio * profile.brow_distance[0]
                && m.brow_distance[1] >= th.brow_raise_ratio * profile.brow_distance[1]
        }
        ActionKind::Wink => winks(0, 1) || winks(1, 0),
    }
}
