use serde::{Deserialize, Serialize};

use super::{AudioError, MelFilterBank, Spectrogram};

/// Per-frame spectral flux on a log-compressed mel spectrogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnsetEnvelope {
    pub values: Vec<f64>,
    /// Frames per second.
    pub frame_rate: f64,
    /// Frame spacing in seconds.
    pub hop: f64,
}

impl OnsetEnvelope {
    pub fn new(values: Vec<f64>, frame_rate: f64) -> Self {
        Self {
            values,
            frame_rate,
            hop: 1.0 / frame_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn frame_time(&self, frame: usize) -> f64 {
        frame as f64 / self.frame_rate
    }

    /// Seconds of audio the envelope spans.
    pub fn coverage(&self) -> f64 {
        self.values.len() as f64 / self.frame_rate
    }

    /// Values of frames whose time falls in `[start, end)`.
    pub fn slice(&self, start: f64, end: f64) -> &[f64] {
        let lo = ((start * self.frame_rate).ceil().max(0.0) as usize).min(self.values.len());
        let hi = ((end * self.frame_rate).ceil().max(0.0) as usize).clamp(lo, self.values.len());
        &self.values[lo..hi]
    }
}

/// `sum_b max(0, L[b,t] - L[b,t-1])` with `L = ln(1 + mel(|X|))`; frame 0 is 0.
pub fn onset_strength(spec: &Spectrogram, mel_bands: usize) -> Result<OnsetEnvelope, AudioError> {
    if spec.n_frames() == 0 {
        return Err(AudioError::Parameter("empty spectrogram".into()));
    }
    if mel_bands == 0 {
        return Err(AudioError::Parameter("mel_bands must be positive".into()));
    }
    let bank = MelFilterBank::new(mel_bands, spec.window_samples, spec.sample_rate);
    let log_mel: Vec<Vec<f64>> = spec
        .magnitudes
        .iter()
        .map(|frame| bank.apply(frame).into_iter().map(f64::ln_1p).collect())
        .collect();
    let mut values = Vec::with_capacity(log_mel.len());
    values.push(0.0);
    for pair in log_mel.windows(2) {
        let flux: f64 = pair[1]
            .iter()
            .zip(&pair[0])
            .map(|(cur, prev)| (cur - prev).max(0.0))
            .sum();
        values.push(flux);
    }
    Ok(OnsetEnvelope::new(values, spec.frame_rate()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{compute_spectrogram, AudioBuffer};
    use crate::synth;

    fn envelope(audio: &AudioBuffer) -> OnsetEnvelope {
        let spec = compute_spectrogram(audio, 2048, 512).unwrap();
        onset_strength(&spec, 128).unwrap()
    }

    fn local_maxima(v: &[f64], min: f64) -> Vec<usize> {
        (1..v.len() - 1)
            .filter(|&i| v[i] > min && v[i] > v[i - 1] && v[i] >= v[i + 1])
            .collect()
    }

    #[test]
    fn silence_gives_zero_envelope() {
        let env = envelope(&synth::silence(2.0, 22050));
        assert!(env.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stationary_sine_has_no_flux_after_attack() {
        let env = envelope(&synth::sine(440.0, 3.0, 0.5, 22050));
        let peak = env.values.iter().cloned().fold(0.0, f64::max);
        assert!(peak > 0.0);
        // attack spans the first few frames while the padded window fills;
        // trailing frames touch the reflected end
        let n = env.len();
        let tail_max = env.values[6..n - 4].iter().cloned().fold(0.0, f64::max);
        assert!(tail_max < 1e-3 * peak, "tail {tail_max} vs peak {peak}");
    }

    #[test]
    fn click_peaks_are_half_a_second_apart() {
        let click_times: Vec<f64> = (1..10).map(|k| k as f64 * 0.5).collect();
        let audio = synth::click_track(&click_times, 5.5, 22050);
        let env = envelope(&audio);
        let max = env.values.iter().cloned().fold(0.0, f64::max);
        let peaks = local_maxima(&env.values, 0.3 * max);
        assert_eq!(peaks.len(), click_times.len());
        for (p, t) in peaks.iter().zip(&click_times) {
            assert!((env.frame_time(*p) - t).abs() <= 2.0 * env.hop, "peak {p} vs click {t}");
        }
        for w in peaks.windows(2) {
            let dt = env.frame_time(w[1]) - env.frame_time(w[0]);
            assert!((dt - 0.5).abs() <= env.hop + 1e-9);
        }
    }

    #[test]
    fn gain_does_not_move_peaks() {
        let click_times: Vec<f64> = (1..8).map(|k| k as f64 * 0.4).collect();
        let loud = synth::click_track(&click_times, 3.5, 22050);
        let quiet = synth::scaled(&loud, 0.25);
        let a = envelope(&loud);
        let b = envelope(&quiet);
        let pa = local_maxima(&a.values, 0.3 * a.values.iter().cloned().fold(0.0, f64::max));
        let pb = local_maxima(&b.values, 0.3 * b.values.iter().cloned().fold(0.0, f64::max));
        assert_eq!(pa, pb);
    }

    #[test]
    fn slice_selects_frames_by_time() {
        let env = OnsetEnvelope::new((0..100).map(|i| i as f64).collect(), 10.0);
        assert_eq!(env.slice(1.0, 2.0), &(10..20).map(|i| i as f64).collect::<Vec<_>>()[..]);
        assert_eq!(env.slice(9.5, 20.0).len(), 5);
        assert!(env.slice(20.0, 30.0).is_empty());
    }
}
