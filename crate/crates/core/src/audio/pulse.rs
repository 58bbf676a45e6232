//! Predominant local pulse: for each onset frame, take the strongest
//! Fourier-tempogram bin in the allowed tempo range, synthesize a windowed
//! cosine kernel with that bin's frequency and phase, and overlap-add the
//! kernels into a single pulse curve.

use std::f64::consts::PI;

use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};

use super::spectrogram::hann;
use super::{AudioError, OnsetEnvelope};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseConfig {
    /// BPM
    pub tempo_min: f64,
    /// BPM
    pub tempo_max: f64,
    /// Tempogram window length in onset frames.
    pub window_frames: usize,
}

impl Default for PulseConfig {
    fn default() -> Self {
        Self {
            tempo_min: 30.0,
            tempo_max: 300.0,
            window_frames: 384,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseCurve {
    /// In `[0, 1]`.
    pub values: Vec<f64>,
    pub frame_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BeatGrid {
    /// Seconds, strictly ascending.
    pub beat_times: Vec<f64>,
}

impl BeatGrid {
    pub fn new(mut beat_times: Vec<f64>) -> Self {
        beat_times.sort_by(f64::total_cmp);
        beat_times.dedup();
        Self { beat_times }
    }

    pub fn is_empty(&self) -> bool {
        self.beat_times.is_empty()
    }

    pub fn len(&self) -> usize {
        self.beat_times.len()
    }

    /// Nearest beat to `t`; ties go to the earlier beat.
    pub fn nearest(&self, t: f64) -> Option<f64> {
        let idx = self.beat_times.partition_point(|&b| b < t);
        let after = self.beat_times.get(idx).copied();
        let before = idx.checked_sub(1).map(|i| self.beat_times[i]);
        match (before, after) {
            (Some(b), Some(a)) => Some(if t - b <= a - t { b } else { a }),
            (b, a) => b.or(a),
        }
    }

    pub fn intervals(&self) -> Vec<f64> {
        self.beat_times.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub(crate) fn clamp_to(&mut self, duration: f64) {
        self.beat_times.retain(|&t| t >= 0.0 && t <= duration);
    }
}

pub fn predominant_local_pulse(
    onset: &OnsetEnvelope,
    config: &PulseConfig,
) -> Result<PulseCurve, AudioError> {
    let (tmin, tmax) = (config.tempo_min, config.tempo_max);
    if !(tmin > 0.0 && tmin < tmax) {
        return Err(AudioError::Parameter(format!(
            "need 0 < tempo_min ({tmin}) < tempo_max ({tmax})"
        )));
    }
    let n_fft = config.window_frames;
    let n = onset.len();
    if n_fft < 4 || n < n_fft {
        return Err(AudioError::InsufficientFrames {
            frames: n,
            needed: n_fft,
        });
    }

    let bin_bpm = |k: usize| k as f64 * onset.frame_rate * 60.0 / n_fft as f64;
    let bins: Vec<usize> = (1..n_fft / 2)
        .filter(|&k| (tmin..=tmax).contains(&bin_bpm(k)))
        .collect();
    if bins.is_empty() {
        return Err(AudioError::Parameter(format!(
            "no tempogram bin falls in {tmin}..{tmax} BPM"
        )));
    }

    let window = hann(n_fft);
    let half = (n_fft / 2) as isize;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    let mut pulse = vec![0.0; n];
    let mut norm = vec![0.0; n];

    for t in 0..n {
        let start = t as isize - half;
        for (j, slot) in buf.iter_mut().enumerate() {
            let idx = start + j as isize;
            let v = if idx >= 0 && (idx as usize) < n {
                onset.values[idx as usize]
            } else {
                0.0
            };
            *slot = Complex64::new(v * window[j], 0.0);
        }
        fft.process(&mut buf);

        let (k, mag) = select_tempo_bin(&buf, &bins);
        let phase = buf[k].arg();

        for (j, &w) in window.iter().enumerate() {
            let idx = start + j as isize;
            if idx < 0 || idx as usize >= n {
                continue;
            }
            let idx = idx as usize;
            if mag > 0.0 {
                let kernel = (2.0 * PI * (k * j) as f64 / n_fft as f64 + phase).cos();
                pulse[idx] += w * kernel;
            }
            norm[idx] += w * w;
        }
    }

    for (p, w) in pulse.iter_mut().zip(&norm) {
        *p = if *w > f64::EPSILON { (*p / w).max(0.0) } else { 0.0 };
    }
    let peak = pulse.iter().cloned().fold(0.0, f64::max);
    if peak > 0.0 {
        for p in &mut pulse {
            *p /= peak;
        }
    }
    Ok(PulseCurve {
        values: pulse,
        frame_rate: onset.frame_rate,
    })
}

/// Sub-harmonic must carry this fraction of the peak magnitude to be
/// preferred over it.
const SUBHARMONIC_RATIO: f64 = 0.75;

/// Strongest bin in `bins`, then corrected downward to `k/d` (d = 4, 3, 2,
/// slowest first) when that sub-harmonic is nearly as strong. Impulse-like
/// onset trains have an almost flat harmonic comb, so the raw maximum often
/// lands on a multiple of the beat rate.
fn select_tempo_bin(spectrum: &[Complex64], bins: &[usize]) -> (usize, f64) {
    // first maximum wins ties
    let mut best = (bins[0], spectrum[bins[0]].norm());
    for &k in &bins[1..] {
        let mag = spectrum[k].norm();
        if mag > best.1 {
            best = (k, mag);
        }
    }
    if best.1 == 0.0 {
        return best;
    }
    let (lo, hi) = (bins[0], bins[bins.len() - 1]);
    for d in [4usize, 3, 2] {
        let centre = (best.0 as f64 / d as f64).round() as usize;
        let candidate = (centre.saturating_sub(1)..=centre + 1)
            .filter(|k| (lo..=hi).contains(k))
            .map(|k| (k, spectrum[k].norm()))
            .fold(None, |acc: Option<(usize, f64)>, c| match acc {
                Some(a) if a.1 >= c.1 => Some(a),
                _ => Some(c),
            });
        if let Some(c) = candidate {
            if c.1 >= SUBHARMONIC_RATIO * best.1 {
                return c;
            }
        }
    }
    best
}

/// Local maxima of the pulse curve strictly above `threshold`, as seconds.
/// A plateau yields one beat at its first frame.
pub fn extract_beats(plp: &PulseCurve, threshold: f64) -> Result<BeatGrid, AudioError> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(AudioError::Parameter(format!(
            "beat threshold {threshold} outside [0, 1)"
        )));
    }
    let v = &plp.values;
    let n = v.len();
    let is_peak = |i: usize| {
        let left = i == 0 || v[i] > v[i - 1];
        let right = i + 1 == n || v[i] >= v[i + 1];
        v[i] > threshold && left && right
    };
    let beat_times = (0..n)
        .filter(|&i| is_peak(i))
        .map(|i| i as f64 / plp.frame_rate)
        .collect();
    Ok(BeatGrid { beat_times })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{compute_spectrogram, onset_strength};
    use crate::synth;

    fn median(mut v: Vec<f64>) -> f64 {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    }

    fn click_envelope(times: &[f64], duration: f64) -> OnsetEnvelope {
        let audio = synth::click_track(times, duration, 22050);
        let spec = compute_spectrogram(&audio, 2048, 512).unwrap();
        onset_strength(&spec, 128).unwrap()
    }

    #[test]
    fn zero_envelope_gives_zero_pulse_and_no_beats() {
        let env = OnsetEnvelope::new(vec![0.0; 500], 22050.0 / 512.0);
        let plp = predominant_local_pulse(&env, &PulseConfig::default()).unwrap();
        assert!(plp.values.iter().all(|&v| v == 0.0));
        assert!(extract_beats(&plp, 0.1).unwrap().is_empty());
    }

    #[test]
    fn short_envelope_is_insufficient() {
        let env = OnsetEnvelope::new(vec![0.0; 100], 43.0);
        assert!(matches!(
            predominant_local_pulse(&env, &PulseConfig::default()),
            Err(AudioError::InsufficientFrames { frames: 100, needed: 384 })
        ));
    }

    #[test]
    fn tempo_range_is_validated() {
        let env = OnsetEnvelope::new(vec![0.0; 500], 43.0);
        let cfg = PulseConfig {
            tempo_min: 200.0,
            tempo_max: 100.0,
            ..Default::default()
        };
        assert!(predominant_local_pulse(&env, &cfg).is_err());
    }

    #[test]
    fn single_isolated_peak_is_one_beat() {
        let mut values = vec![0.0; 50];
        values[20] = 1.0;
        let plp = PulseCurve {
            values,
            frame_rate: 10.0,
        };
        assert_eq!(extract_beats(&plp, 0.1).unwrap().beat_times, vec![2.0]);
    }

    #[test]
    fn plateau_counts_once() {
        let plp = PulseCurve {
            values: vec![0.0, 0.5, 0.5, 0.0],
            frame_rate: 1.0,
        };
        assert_eq!(extract_beats(&plp, 0.1).unwrap().beat_times, vec![1.0]);
        assert!(extract_beats(&plp, 1.0).is_err());
    }

    #[test]
    fn pulse_is_normalized() {
        let times: Vec<f64> = (1..40).map(|k| k as f64 * 0.5).collect();
        let env = click_envelope(&times, 20.0);
        let plp = predominant_local_pulse(&env, &PulseConfig::default()).unwrap();
        assert!(plp.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(plp.values.iter().cloned().fold(0.0, f64::max), 1.0);
    }

    #[test]
    fn click_track_at_120_bpm() {
        let times: Vec<f64> = (0..60).map(|k| 0.25 + k as f64 * 0.5).collect();
        let env = click_envelope(&times, 30.0);
        let plp = predominant_local_pulse(&env, &PulseConfig::default()).unwrap();
        let beats = extract_beats(&plp, 0.1).unwrap();
        assert!((55..=65).contains(&beats.len()), "{} beats", beats.len());
        assert!((median(beats.intervals()) - 0.5).abs() <= 0.020);
    }

    #[test]
    fn tempo_change_shifts_spacing() {
        // 120 BPM for 15 s, then 90 BPM
        let mut times: Vec<f64> = (0..30).map(|k| 0.25 + k as f64 * 0.5).collect();
        let mut t = 15.25;
        while t < 30.0 {
            times.push(t);
            t += 60.0 / 90.0;
        }
        let env = click_envelope(&times, 30.0);
        let plp = predominant_local_pulse(&env, &PulseConfig::default()).unwrap();
        let beats = extract_beats(&plp, 0.1).unwrap();
        // allow one tempogram window (~8.9 s) of transition around 15 s
        let early: Vec<f64> = beats
            .beat_times
            .windows(2)
            .filter(|w| w[1] < 15.0 - 4.5)
            .map(|w| w[1] - w[0])
            .collect();
        let late: Vec<f64> = beats
            .beat_times
            .windows(2)
            .filter(|w| w[0] > 15.0 + 4.5)
            .map(|w| w[1] - w[0])
            .collect();
        assert!((median(early) - 0.5).abs() <= 0.020);
        assert!((median(late) - 2.0 / 3.0).abs() <= 0.025);
    }

    #[test]
    fn nearest_beat_lookup() {
        let g = BeatGrid::new(vec![1.0, 2.0, 3.0]);
        assert_eq!(g.nearest(0.2), Some(1.0));
        assert_eq!(g.nearest(1.5), Some(1.0));
        assert_eq!(g.nearest(1.6), Some(2.0));
        assert_eq!(g.nearest(9.0), Some(3.0));
        assert_eq!(BeatGrid::default().nearest(1.0), None);
    }

    #[test]
    fn click_tempo_sweep_within_five_percent() {
        for bpm in [60.0, 75.0, 90.0, 100.0, 120.0, 137.0, 150.0, 165.0, 180.0] {
            let period = 60.0 / bpm;
            let times: Vec<f64> = (0..).map(|k| 0.3 + k as f64 * period).take_while(|&t| t < 20.0).collect();
            let env = click_envelope(&times, 20.0);
            let plp = predominant_local_pulse(&env, &PulseConfig::default()).unwrap();
            let beats = extract_beats(&plp, 0.1).unwrap();
            let ibi = median(beats.intervals());
            assert!((ibi - period).abs() <= 0.05 * period, "{bpm} BPM: median IBI {ibi}");
        }
    }
}
