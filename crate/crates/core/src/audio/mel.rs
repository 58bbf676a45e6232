/// Triangular mel filter bank on the Slaney mel scale with area
/// normalization (linear below 1 kHz, logarithmic above).
#[derive(Debug, Clone)]
pub struct MelFilterBank {
    weights: Vec<Vec<f64>>,
}

const F_SP: f64 = 200.0 / 3.0;
const MIN_LOG_HZ: f64 = 1000.0;
const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;

fn log_step() -> f64 {
    6.4f64.ln() / 27.0
}

pub fn hz_to_mel(hz: f64) -> f64 {
    if hz >= MIN_LOG_HZ {
        MIN_LOG_MEL + (hz / MIN_LOG_HZ).ln() / log_step()
    } else {
        hz / F_SP
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    if mel >= MIN_LOG_MEL {
        MIN_LOG_HZ * (log_step() * (mel - MIN_LOG_MEL)).exp()
    } else {
        mel * F_SP
    }
}

impl MelFilterBank {
    pub fn new(n_mels: usize, n_fft: usize, sample_rate: u32) -> Self {
        let n_bins = n_fft / 2 + 1;
        let fmax = sample_rate as f64 / 2.0;
        let mel_max = hz_to_mel(fmax);
        let hz_pts: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz: Vec<f64> = (0..n_bins)
            .map(|k| k as f64 * sample_rate as f64 / n_fft as f64)
            .collect();
        let weights = (0..n_mels)
            .map(|m| {
                let (lo, mid, hi) = (hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]);
                let enorm = 2.0 / (hi - lo);
                bin_hz
                    .iter()
                    .map(|&f| {
                        let rise = (f - lo) / (mid - lo);
                        let fall = (hi - f) / (hi - mid);
                        rise.min(fall).max(0.0) * enorm
                    })
                    .collect()
            })
            .collect();
        Self { weights }
    }

    pub fn n_mels(&self) -> usize {
        self.weights.len()
    }

    pub fn apply(&self, spectrum: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| w.iter().zip(spectrum).map(|(a, b)| a * b).sum())
            .collect()
    }
}
