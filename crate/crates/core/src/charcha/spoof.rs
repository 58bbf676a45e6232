use serde::{Deserialize, Serialize};

use super::{FaceMeasures, LandmarkFrame, REQUIRED_LANDMARKS};

pub const FLAG_STATIC: &str = "static input";
pub const FLAG_INTERMITTENT: &str = "intermittent presence";
pub const FLAG_FACE_SWAP: &str = "face swap discontinuity";
pub const FLAG_STREAM_GAP: &str = "stream gap";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpoofConfig {
    pub static_window_ms: u64,
    /// Mean per-coordinate landmark variance below this over a full window
    /// is treated as a held photo.
    pub static_variance_floor: f64,
    pub min_static_frames: usize,
    pub min_presence: f64,
    /// Relative interocular change between consecutive face frames.
    pub max_interocular_jump: f64,
}

impl Default for SpoofConfig {
    fn default() -> Self {
        Self {
            static_window_ms: 3000,
            static_variance_floor: 2.5e-7,
            min_static_frames: 10,
            min_presence: 0.7,
            max_interocular_jump: 0.4,
        }
    }
}

/// Advisory liveness heuristics. Flags never change a verdict.
#[derive(Debug, Clone, Default)]
pub struct SpoofTracker {
    config: SpoofConfig,
    frames_total: usize,
    frames_present: usize,
    last_interocular: Option<f64>,
    origin: Option<Vec<f64>>,
    // (t_ms, landmark x/y relative to the first usable frame)
    usable: Vec<(u64, Vec<f64>)>,
    flags: Vec<String>,
}

impl SpoofTracker {
    pub fn new(config: SpoofConfig) -> Self {
        Self {
            config,
            ..Self::default()
        }
    }

    pub fn raise(&mut self, flag: &str) {
        if !self.flags.iter().any(|f| f == flag) {
            self.flags.push(flag.to_string());
        }
    }

    pub fn observe(&mut self, frame: &LandmarkFrame) {
        self.frames_total += 1;
        if !frame.face_present {
            return;
        }
        self.frames_present += 1;
        let Some(m) = FaceMeasures::from_frame(frame) else {
            return;
        };
        if let Some(prev) = self.last_interocular {
            if (m.interocular / prev - 1.0).abs() > self.config.max_interocular_jump {
                self.raise(FLAG_FACE_SWAP);
            }
        }
        self.last_interocular = Some(m.interocular);

        let raw: Vec<f64> = REQUIRED_LANDMARKS
            .iter()
            .flat_map(|n| {
                let p = frame.points[*n];
                [p[0], p[1]]
            })
            .collect();
        let origin = self.origin.get_or_insert_with(|| raw.clone());
        let centered = raw.iter().zip(origin.iter()).map(|(a, o)| a - o).collect();
        self.usable.push((frame.t_ms, centered));
    }

    fn has_static_window(&self) -> bool {
        let n = self.usable.len();
        if n == 0 {
            return false;
        }
        let dim = self.usable[0].1.len();
        // prefix sums of x and x^2 per coordinate
        let mut s1 = vec![vec![0.0; dim]; n + 1];
        let mut s2 = vec![vec![0.0; dim]; n + 1];
        for (i, (_, v)) in self.usable.iter().enumerate() {
            for d in 0..dim {
                s1[i + 1][d] = s1[i][d] + v[d];
                s2[i + 1][d] = s2[i][d] + v[d] * v[d];
            }
        }
        let mut j = 0;
        for i in 0..n {
            let horizon = self.usable[i].0 + self.config.static_window_ms;
            j = j.max(i);
            while j < n && self.usable[j].0 < horizon {
                j += 1;
            }
            if j == n {
                // no frame closes this window
                break;
            }
            let count = j - i;
            if count < self.config.min_static_frames.max(2) {
                continue;
            }
            let c = count as f64;
            let var: f64 = (0..dim)
                .map(|d| {
                    let m = (s1[j][d] - s1[i][d]) / c;
                    ((s2[j][d] - s2[i][d]) / c - m * m).max(0.0)
                })
                .sum::<f64>()
                / dim as f64;
            if var < self.config.static_variance_floor {
                return true;
            }
        }
        false
    }

    /// All flags, including the whole-session checks.
    pub fn flags(&self) -> Vec<String> {
        let mut out = self.flags.clone();
        let mut push = |f: &str| {
            if !out.iter().any(|x| x == f) {
                out.push(f.to_string());
            }
        };
        if self.has_static_window() {
            push(FLAG_STATIC);
        }
        if self.frames_total > 0
            && (self.frames_present as f64) < self.config.min_presence * self.frames_total as f64
        {
            push(FLAG_INTERMITTENT);
        }
        out
    }
}
