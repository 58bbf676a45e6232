//! Fixed-length timbre/energy summary per analysis window. This is the
//! built-in fallback feature set for the emotion regressor; an externally
//! extracted feature file with the same shape can be used instead.

use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};

use super::spectrogram::hann;
use super::{AudioBuffer, AudioError};

pub const FEATURE_DIM: usize = 8;

/// Order of [`WindowFeatures::vector`].
pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "rms_mean",
    "rms_std",
    "spectral_centroid_mean",
    "spectral_centroid_std",
    "spectral_flux_mean",
    "spectral_flux_std",
    "zero_crossing_rate_mean",
    "spectral_rolloff_mean",
];

const FRAME: usize = 2048;
const HOP: usize = 512;
const ROLLOFF: f64 = 0.85;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowFeatures {
    pub window_start: f64,
    pub window_length: f64,
    pub vector: Vec<f64>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// One [`WindowFeatures`] per full window; a trailing partial window is
/// dropped.
pub fn window_features(audio: &AudioBuffer, window: f64) -> Result<Vec<WindowFeatures>, AudioError> {
    if !(window > 0.0 && window.is_finite()) {
        return Err(AudioError::Parameter(format!("window {window} must be positive")));
    }
    let sr = audio.sample_rate() as f64;
    let win_samples = (window * sr).round() as usize;
    let n_windows = audio.len().checked_div(win_samples).unwrap_or(0);
    if n_windows == 0 {
        tracing::warn!(
            duration = audio.duration(),
            window,
            "audio shorter than one feature window; no features extracted"
        );
        return Ok(Vec::new());
    }

    let frame_len = FRAME.min(win_samples);
    let hann = hann(frame_len);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(frame_len);
    let n_bins = frame_len / 2 + 1;
    let bin_hz = sr / frame_len as f64;
    let win_sum: f64 = hann.iter().sum();
    let mut buf = vec![Complex64::new(0.0, 0.0); frame_len];

    let mut out = Vec::with_capacity(n_windows);
    for w in 0..n_windows {
        let seg = &audio.samples()[w * win_samples..(w + 1) * win_samples];
        let mut rms = Vec::new();
        let mut centroid = Vec::new();
        let mut flux = Vec::new();
        let mut zcr = Vec::new();
        let mut rolloff = Vec::new();
        let mut prev: Option<Vec<f64>> = None;

        let mut start = 0;
        while start + frame_len <= seg.len() {
            let frame = &seg[start..start + frame_len];
            let energy: f64 = frame.iter().map(|&s| (s as f64).powi(2)).sum();
            rms.push((energy / frame_len as f64).sqrt());
            let crossings = frame
                .windows(2)
                .filter(|p| (p[0] >= 0.0) != (p[1] >= 0.0))
                .count();
            zcr.push(crossings as f64 / (frame_len - 1).max(1) as f64);

            for (slot, (&s, &h)) in buf.iter_mut().zip(frame.iter().zip(&hann)) {
                *slot = Complex64::new(s as f64 * h, 0.0);
            }
            fft.process(&mut buf);
            let mag: Vec<f64> = buf[..n_bins].iter().map(|c| c.norm() / win_sum).collect();

            let total: f64 = mag.iter().sum();
            centroid.push(if total > 0.0 {
                mag.iter().enumerate().map(|(k, m)| k as f64 * bin_hz * m).sum::<f64>() / total
            } else {
                0.0
            });

            let power: Vec<f64> = mag.iter().map(|m| m * m).collect();
            let total_power: f64 = power.iter().sum();
            rolloff.push(if total_power > 0.0 {
                let mut acc = 0.0;
                let k = power
                    .iter()
                    .position(|p| {
                        acc += p;
                        acc >= ROLLOFF * total_power
                    })
                    .unwrap_or(n_bins - 1);
                k as f64 * bin_hz
            } else {
                0.0
            });

            if let Some(p) = &prev {
                let f: f64 = mag
                    .iter()
                    .zip(p)
                    .map(|(c, q)| (c - q).max(0.0).powi(2))
                    .sum();
                flux.push(f.sqrt());
            }
            prev = Some(mag);
            start += HOP;
        }

        let (rms_m, rms_s) = mean_std(&rms);
        let (cen_m, cen_s) = mean_std(&centroid);
        let (flux_m, flux_s) = mean_std(&flux);
        let (zcr_m, _) = mean_std(&zcr);
        let (roll_m, _) = mean_std(&rolloff);
        out.push(WindowFeatures {
            window_start: w as f64 * window,
            window_length: window,
            vector: vec![rms_m, rms_s, cen_m, cen_s, flux_m, flux_s, zcr_m, roll_m],
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn twelve_seconds_give_two_windows() {
        let a = synth::sine(220.0, 12.0, 0.3, 22050);
        let f = window_features(&a, 5.0).unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(f[1].window_start, 5.0);
        assert!(f.iter().all(|w| w.vector.len() == FEATURE_DIM));
        assert!(f.iter().flat_map(|w| &w.vector).all(|v| v.is_finite()));
    }

    #[test]
    fn silence_has_zero_energy_and_flux() {
        let f = window_features(&synth::silence(10.0, 22050), 5.0).unwrap();
        for w in &f {
            assert_eq!(w.vector[0], 0.0);
            assert_eq!(w.vector[4], 0.0);
        }
    }

    #[test]
    fn noise_crosses_zero_more_than_sine() {
        let noise = synth::white_noise(5.0, 0.3, 7, 22050);
        let sine = synth::sine(220.0, 5.0, 0.3, 22050);
        let zn = window_features(&noise, 5.0).unwrap()[0].vector[6];
        let zs = window_features(&sine, 5.0).unwrap()[0].vector[6];
        assert!(zn > 10.0 * zs, "noise {zn} sine {zs}");
    }

    #[test]
    fn short_audio_gives_empty_list() {
        let a = synth::silence(3.0, 22050);
        assert!(window_features(&a, 5.0).unwrap().is_empty());
        assert!(window_features(&a, 0.0).is_err());
    }

    #[test]
    fn deterministic() {
        let a = synth::white_noise(6.0, 0.5, 3, 22050);
        assert_eq!(window_features(&a, 5.0).unwrap(), window_features(&a, 5.0).unwrap());
    }
}
