//! Deterministic rhythm and timbre analysis over mono PCM audio.
//!
//! The pipeline is: [`compute_spectrogram`] → [`onset_strength`] →
//! [`predominant_local_pulse`] → [`extract_beats`], plus
//! [`window_features`] for the emotion regressor. [`analyze`] runs all of it
//! with the default parameters and packs the results into an
//! [`AnalysisBundle`].

mod features;
mod mel;
mod onset;
mod pulse;
mod spectrogram;
mod wav;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use features::{window_features, WindowFeatures, FEATURE_DIM, FEATURE_NAMES};
pub use mel::MelFilterBank;
pub use onset::{onset_strength, OnsetEnvelope};
pub use pulse::{extract_beats, predominant_local_pulse, BeatGrid, PulseConfig, PulseCurve};
pub use spectrogram::{compute_spectrogram, Spectrogram};
pub use wav::{read_wav, read_wav_duration, write_wav};

/// Analysis sample rate. Input at any other rate is resampled on load.
pub const ANALYSIS_SAMPLE_RATE: u32 = 22_050;
pub const STFT_WINDOW: usize = 2048;
pub const STFT_HOP: usize = 512;
pub const MEL_BANDS: usize = 128;
pub const DEFAULT_BEAT_THRESHOLD: f64 = 0.1;
pub const DEFAULT_FEATURE_WINDOW: f64 = 5.0;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("audio too short: {samples} samples, need at least {needed}")]
    TooShort { samples: usize, needed: usize },
    #[error("insufficient frames: onset envelope has {frames} frames, tempogram window needs {needed}")]
    InsufficientFrames { frames: usize, needed: usize },
    #[error("invalid audio: {0}")]
    Invalid(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Mono PCM samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::Invalid("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(AudioError::Invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// Mixes interleaved multi-channel samples down to mono by averaging.
    pub fn from_interleaved(
        interleaved: &[f32],
        channels: usize,
        sample_rate: u32,
    ) -> Result<Self, AudioError> {
        if channels == 0 {
            return Err(AudioError::Invalid("zero channels".into()));
        }
        let mono = interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f32>() / channels as f32)
            .collect();
        Self::new(mono, sample_rate)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Linear-interpolation resampling. Adequate for onset analysis, which
    /// only looks at spectral change below a few kHz.
    pub fn resample(&self, target_rate: u32) -> AudioBuffer {
        if target_rate == self.sample_rate || self.samples.is_empty() {
            return AudioBuffer {
                samples: self.samples.clone(),
                sample_rate: target_rate.max(1),
            };
        }
        let ratio = self.sample_rate as f64 / target_rate as f64;
        let out_len = ((self.samples.len() as f64) / ratio).floor() as usize;
        let last = self.samples.len() - 1;
        let samples = (0..out_len)
            .map(|i| {
                let pos = i as f64 * ratio;
                let i0 = (pos.floor() as usize).min(last);
                let i1 = (i0 + 1).min(last);
                let frac = pos - i0 as f64;
                (self.samples[i0] as f64 * (1.0 - frac) + self.samples[i1] as f64 * frac) as f32
            })
            .collect();
        AudioBuffer {
            samples,
            sample_rate: target_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub window_samples: usize,
    pub hop_samples: usize,
    pub mel_bands: usize,
    pub pulse: PulseConfig,
    pub beat_threshold: f64,
    /// Feature window length in seconds.
    pub feature_window: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            window_samples: STFT_WINDOW,
            hop_samples: STFT_HOP,
            mel_bands: MEL_BANDS,
            pulse: PulseConfig::default(),
            beat_threshold: DEFAULT_BEAT_THRESHOLD,
            feature_window: DEFAULT_FEATURE_WINDOW,
        }
    }
}

/// Everything downstream stages need from the audio, in one serializable
/// document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisBundle {
    pub sample_rate: u32,
    pub duration: f64,
    pub hop_samples: usize,
    pub frame_rate: f64,
    pub onset: OnsetEnvelope,
    pub pulse: PulseCurve,
    pub beats: BeatGrid,
    pub feature_names: Vec<String>,
    pub features: Vec<WindowFeatures>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Runs the full analysis chain. The buffer is resampled to
/// [`ANALYSIS_SAMPLE_RATE`] first when needed.
///
/// A clip shorter than one tempogram window gets a zero pulse curve and an
/// empty beat grid instead of an error; a clip shorter than one feature
/// window gets no features. Both cases add a warning.
pub fn analyze(audio: &AudioBuffer, config: &AnalysisConfig) -> Result<AnalysisBundle, AudioError> {
    let audio = if audio.sample_rate() == ANALYSIS_SAMPLE_RATE {
        audio.clone()
    } else {
        audio.resample(ANALYSIS_SAMPLE_RATE)
    };
    let spec = compute_spectrogram(&audio, config.window_samples, config.hop_samples)?;
    let onset = onset_strength(&spec, config.mel_bands)?;
    let mut warnings = Vec::new();
    let pulse = match predominant_local_pulse(&onset, &config.pulse) {
        Ok(p) => p,
        Err(e @ AudioError::InsufficientFrames { .. }) => {
            warnings.push(format!("no beat tracking: {e}"));
            PulseCurve {
                values: vec![0.0; onset.values.len()],
                frame_rate: onset.frame_rate,
            }
        }
        Err(e) => return Err(e),
    };
    let mut beats = extract_beats(&pulse, config.beat_threshold)?;
    beats.clamp_to(audio.duration());
    let features = window_features(&audio, config.feature_window)?;
    if features.is_empty() {
        warnings.push(format!(
            "no emotion windows: audio is shorter than {} s",
            config.feature_window
        ));
    }
    Ok(AnalysisBundle {
        sample_rate: audio.sample_rate(),
        duration: audio.duration(),
        hop_samples: config.hop_samples,
        frame_rate: onset.frame_rate,
        onset,
        pulse,
        beats,
        feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        features,
        warnings,
    })
}
