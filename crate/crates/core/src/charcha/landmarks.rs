use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Landmarks every face-present frame must carry. Coordinates are
/// image-relative in the mirrored (selfie) view, so `left_*` points sit at
/// smaller x and a turn to the user's right moves the nose toward larger x.
pub const REQUIRED_LANDMARKS: [&str; 18] = [
    "nose_tip",
    "chin",
    "left_eye_outer",
    "left_eye_inner",
    "right_eye_outer",
    "right_eye_inner",
    "left_eye_upper",
    "left_eye_lower",
    "right_eye_upper",
    "right_eye_lower",
    "mouth_left",
    "mouth_right",
    "upper_lip",
    "lower_lip",
    "left_brow",
    "right_brow",
    "face_left",
    "face_right",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkFrame {
    pub t_ms: u64,
    pub face_present: bool,
    #[serde(default)]
    pub points: BTreeMap<String, [f64; 3]>,
}

impl LandmarkFrame {
    pub fn faceless(t_ms: u64) -> Self {
        Self {
            t_ms,
            face_present: false,
            points: BTreeMap::new(),
        }
    }

    fn xy(&self, name: &str) -> Option<(f64, f64)> {
        self.points
            .get(name)
            .filter(|p| p.iter().all(|v| v.is_finite()))
            .map(|p| (p[0], p[1]))
    }

    /// Face present with every required landmark.
    pub fn is_usable(&self) -> bool {
        self.face_present && REQUIRED_LANDMARKS.iter().all(|n| self.xy(n).is_some())
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

fn mid(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    (0.5 * (a.0 + b.0), 0.5 * (a.1 + b.1))
}

/// Scale-free geometry of one frame. Distances are divided by the
/// interocular (outer eye corner) distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceMeasures {
    pub interocular: f64,
    pub yaw: f64,
    pub pitch: f64,
    pub mouth_aspect_ratio: f64,
    pub eye_aspect_ratio: [f64; 2],
    pub brow_distance: [f64; 2],
    pub smile_width: f64,
}

impl FaceMeasures {
    pub fn from_frame(frame: &LandmarkFrame) -> Option<Self> {
        if !frame.face_present {
            return None;
        }
        let p = |n: &str| frame.xy(n);
        let (leo, lei, reo, rei) = (
            p("left_eye_outer")?,
            p("left_eye_inner")?,
            p("right_eye_outer")?,
            p("right_eye_inner")?,
        );
        let io = dist(leo, reo);
        let mouth_w = dist(p("mouth_left")?, p("mouth_right")?);
        let lw = dist(leo, lei);
        let rw = dist(reo, rei);
        if io <= 0.0 || mouth_w <= 0.0 || lw <= 0.0 || rw <= 0.0 {
            return None;
        }
        let eye_mid = mid(leo, reo);
        let nose = p("nose_tip")?;
        let m = Self {
            interocular: io,
            yaw: (nose.0 - eye_mid.0) / io,
            pitch: (nose.1 - eye_mid.1) / io,
            mouth_aspect_ratio: dist(p("upper_lip")?, p("lower_lip")?) / mouth_w,
            eye_aspect_ratio: [
                dist(p("left_eye_upper")?, p("left_eye_lower")?) / lw,
                dist(p("right_eye_upper")?, p("right_eye_lower")?) / rw,
            ],
            brow_distance: [
                dist(p("left_brow")?, mid(leo, lei)) / io,
                dist(p("right_brow")?, mid(reo, rei)) / io,
            ],
            smile_width: mouth_w / io,
        };
        // the remaining required points only need to exist
        for n in ["chin", "face_left", "face_right"] {
            p(n)?;
        }
        Some(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationProfile {
    pub neutral_yaw: f64,
    pub neutral_pitch: f64,
    pub mouth_aspect_ratio: f64,
    pub eye_aspect_ratio: [f64; 2],
    pub brow_distance: [f64; 2],
    pub smile_width: f64,
    pub interocular: f64,
    pub frames_used: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("only {found} usable face frames, need {needed}")]
    TooFewFrames { found: usize, needed: usize },
    #[error("degenerate neutral measure {0}")]
    Degenerate(&'static str),
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per-measure medians over the usable frames.
pub fn calibrate(frames: &[LandmarkFrame], min_frames: usize) -> Result<CalibrationProfile, CalibrationError> {
    let ms: Vec<FaceMeasures> = frames.iter().filter_map(FaceMeasures::from_frame).collect();
    if ms.len() < min_frames.max(1) {
        return Err(CalibrationError::TooFewFrames {
            found: ms.len(),
            needed: min_frames,
        });
    }
    let med = |f: fn(&FaceMeasures) -> f64| median(ms.iter().map(f).collect());
    let profile = CalibrationProfile {
        neutral_yaw: med(|m| m.yaw),
        neutral_pitch: med(|m| m.pitch),
        mouth_aspect_ratio: med(|m| m.mouth_aspect_ratio),
        eye_aspect_ratio: [med(|m| m.eye_aspect_ratio[0]), med(|m| m.eye_aspect_ratio[1])],
        brow_distance: [med(|m| m.brow_distance[0]), med(|m| m.brow_distance[1])],
        smile_width: med(|m| m.smile_width),
        interocular: med(|m| m.interocular),
        frames_used: ms.len(),
    };
    let positive = [
        ("mouth_aspect_ratio", profile.mouth_aspect_ratio),
        ("left_eye_aspect_ratio", profile.eye_aspect_ratio[0]),
        ("right_eye_aspect_ratio", profile.eye_aspect_ratio[1]),
        ("left_brow_distance", profile.brow_distance[0]),
        ("right_brow_distance", profile.brow_distance[1]),
        ("smile_width", profile.smile_width),
        ("interocular", profile.interocular),
    ];
    for (name, v) in positive {
        if !(v > 0.0 && v.is_finite()) {
            return Err(CalibrationError::Degenerate(name));
        }
    }
    Ok(profile)
}
