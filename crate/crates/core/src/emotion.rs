//! Valence/arousal prediction and running-sum quadrant tracking on the
//! circumplex model of affect.
//!
//! Each analysis window yields one [`ValenceArousal`] pair. The tracker adds
//! it to a cumulative position and emits an [`EmotionEvent`] whenever the
//! position's quadrant changes; the first window always emits.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::WindowFeatures;

#[derive(Debug, Error)]
pub enum EmotionError {
    #[error("feature dimension {got} does not match regressor input dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("window at {got}s is not after previous window at {previous}s")]
    OutOfOrder { previous: f64, got: f64 },
    #[error("invalid weights: {0}")]
    Weights(String),
    #[error("invalid track: {0}")]
    Track(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValenceArousal {
    pub valence: f64,
    pub arousal: f64,
}

impl ValenceArousal {
    /// Clamps both axes to `[-1, 1]`; non-finite inputs become 0.
    pub fn new(valence: f64, arousal: f64) -> Self {
        let clamp = |x: f64| if x.is_finite() { x.clamp(-1.0, 1.0) } else { 0.0 };
        Self {
            valence: clamp(valence),
            arousal: clamp(arousal),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EmotionQuadrant {
    /// v < 0, a < 0
    Melancholy,
    /// v >= 0, a < 0
    Serene,
    /// v < 0, a >= 0
    Tense,
    /// v >= 0, a >= 0
    Euphoric,
}

impl EmotionQuadrant {
    pub const ALL: [EmotionQuadrant; 4] = [
        EmotionQuadrant::Melancholy,
        EmotionQuadrant::Serene,
        EmotionQuadrant::Tense,
        EmotionQuadrant::Euphoric,
    ];

    /// Axis values (0.0 and -0.0 alike) resolve to the non-negative side.
    pub fn of(valence: f64, arousal: f64) -> Self {
        match (valence >= 0.0, arousal >= 0.0) {
            (false, false) => Self::Melancholy,
            (true, false) => Self::Serene,
            (false, true) => Self::Tense,
            (true, true) => Self::Euphoric,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Melancholy => "Melancholy",
            Self::Serene => "Serene",
            Self::Tense => "Tense",
            Self::Euphoric => "Euphoric",
        }
    }
}

impl fmt::Display for EmotionQuadrant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmotionEvent {
    /// Window start, seconds.
    pub time: f64,
    pub quadrant: EmotionQuadrant,
}

/// Maps a window's feature vector to a valence/arousal pair.
///
/// Implementations must be usable from several threads at once.
pub trait VaRegressor: Send + Sync {
    fn input_dim(&self) -> usize;

    fn predict_raw(&self, features: &[f64]) -> (f64, f64);

    fn predict(&self, features: &WindowFeatures) -> Result<ValenceArousal, EmotionError> {
        let got = features.vector.len();
        if got != self.input_dim() {
            return Err(EmotionError::Dimension {
                expected: self.input_dim(),
                got,
            });
        }
        let (v, a) = self.predict_raw(&features.vector);
        Ok(ValenceArousal::new(v, a))
    }
}

/// `va = W x + b` with `W` 2×D row-major (valence row first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineRegressor {
    pub input_dim: usize,
    pub weights: Vec<f64>,
    pub bias: [f64; 2],
}

impl AffineRegressor {
    pub fn new(input_dim: usize, weights: Vec<f64>, bias: [f64; 2]) -> Result<Self, EmotionError> {
        let r = Self {
            input_dim,
            weights,
            bias,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn zeros(input_dim: usize) -> Self {
        Self {
            input_dim,
            weights: vec![0.0; 2 * input_dim],
            bias: [0.0, 0.0],
        }
    }

    fn validate(&self) -> Result<(), EmotionError> {
        if self.input_dim == 0 {
            return Err(EmotionError::Weights("input_dim must be positive".into()));
        }
        if self.weights.len() != 2 * self.input_dim {
            return Err(EmotionError::Weights(format!(
                "expected {} weights for input_dim {}, got {}",
                2 * self.input_dim,
                self.input_dim,
                self.weights.len()
            )));
        }
        if self.weights.iter().chain(&self.bias).any(|w| !w.is_finite()) {
            return Err(EmotionError::Weights("non-finite weight".into()));
        }
        Ok(())
    }

    /// Loads the JSON weights file (`{"input_dim", "weights", "bias"}`).
    pub fn from_json(text: &str) -> Result<Self, EmotionError> {
        let r: Self = serde_json::from_str(text)?;
        r.validate()?;
        Ok(r)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmotionError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl VaRegressor for AffineRegressor {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn predict_raw(&self, x: &[f64]) -> (f64, f64) {
        let (wv, wa) = self.weights.split_at(self.input_dim);
        let dot = |w: &[f64]| w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        (dot(wv) + self.bias[0], dot(wa) + self.bias[1])
    }
}

/// One row of a precomputed VA track file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaSample {
    pub window_start: f64,
    pub valence: f64,
    pub arousal: f64,
}

/// Parses a VA track file: a JSON array of `{window_start, valence, arousal}`.
pub fn parse_va_track(text: &str) -> Result<Vec<VaSample>, EmotionError> {
    let rows: Vec<VaSample> = serde_json::from_str(text)?;
    for (i, r) in rows.iter().enumerate() {
        if !(r.window_start.is_finite() && r.valence.is_finite() && r.arousal.is_finite()) {
            return Err(EmotionError::Track(format!("row {i} has a non-finite value")));
        }
    }
    Ok(rows)
}

/// Running-sum position in valence/arousal space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionState {
    /// (valence sum, arousal sum)
    pub position: (f64, f64),
    pub current_quadrant: Option<EmotionQuadrant>,
    pub windows_seen: usize,
    last_window_start: Option<f64>,
    /// Multiplier applied to the position before each update. 1.0 keeps the
    /// literal undecayed sum.
    decay: f64,
}

impl Default for EmotionState {
    fn default() -> Self {
        Self::new()
    }
}

impl EmotionState {
    pub fn new() -> Self {
        Self::with_decay(1.0)
    }

    pub fn with_decay(decay: f64) -> Self {
        Self {
            position: (0.0, 0.0),
            current_quadrant: None,
            windows_seen: 0,
            last_window_start: None,
            decay,
        }
    }

    /// Resumes from a known position, as if one or more windows had already
    /// been consumed.
    pub fn at(position: (f64, f64)) -> Self {
        Self {
            position,
            current_quadrant: Some(EmotionQuadrant::of(position.0, position.1)),
            windows_seen: 1,
            last_window_start: None,
            decay: 1.0,
        }
    }

    pub fn update(
        &mut self,
        va: ValenceArousal,
        window_start: f64,
    ) -> Result<Option<EmotionEvent>, EmotionError> {
        if let Some(prev) = self.last_window_start {
            if window_start.partial_cmp(&prev) != Some(std::cmp::Ordering::Greater) {
                return Err(EmotionError::OutOfOrder {
                    previous: prev,
                    got: window_start,
                });
            }
        }
        self.position = (
            self.position.0 * self.decay + va.valence,
            self.position.1 * self.decay + va.arousal,
        );
        self.windows_seen += 1;
        self.last_window_start = Some(window_start);
        let quadrant = EmotionQuadrant::of(self.position.0, self.position.1);
        if self.current_quadrant == Some(quadrant) {
            return Ok(None);
        }
        self.current_quadrant = Some(quadrant);
        Ok(Some(EmotionEvent {
            time: window_start,
            quadrant,
        }))
    }
}

/// Functional form of [`EmotionState::update`].
pub fn update_position(
    state: &EmotionState,
    va: ValenceArousal,
    window_start: f64,
) -> Result<(EmotionState, Option<EmotionEvent>), EmotionError> {
    let mut next = state.clone();
    let event = next.update(va, window_start)?;
    Ok((next, event))
}

pub fn predict_va(
    regressor: &dyn VaRegressor,
    features: &WindowFeatures,
) -> Result<ValenceArousal, EmotionError> {
    regressor.predict(features)
}

/// Folds the tracker over already-predicted samples.
pub fn events_from_samples(samples: &[VaSample], decay: f64) -> Result<Vec<EmotionEvent>, EmotionError> {
    let mut state = EmotionState::with_decay(decay);
    let mut events = Vec::new();
    for s in samples {
        if let Some(e) = state.update(ValenceArousal::new(s.valence, s.arousal), s.window_start)? {
            events.push(e);
        }
    }
    Ok(events)
}

/// Predicts every window and folds the tracker over the results.
pub fn emotion_track(
    regressor: &dyn VaRegressor,
    features: &[WindowFeatures],
) -> Result<Vec<EmotionEvent>, EmotionError> {
    let samples = features
        .iter()
        .map(|f| {
            let va = regressor.predict(f)?;
            Ok(VaSample {
                window_start: f.window_start,
                valence: va.valence,
                arousal: va.arousal,
            })
        })
        .collect::<Result<Vec<_>, EmotionError>>()?;
    events_from_samples(&samples, 1.0)
}
