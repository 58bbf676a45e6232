use std::f64::consts::PI;

use rustfft::{num_complex::Complex64, FftPlanner};

use super::{AudioBuffer, AudioError};

/// Magnitude STFT, `frames × (window/2 + 1)` bins.
///
/// Frames are centered: the signal is reflect-padded by `window/2` on both
/// sides, so frame `t` is centered on sample `t * hop` and the frame count is
/// `floor(n / hop) + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub magnitudes: Vec<Vec<f64>>,
    pub sample_rate: u32,
    pub window_samples: usize,
    pub hop_samples: usize,
}

impl Spectrogram {
    pub fn n_frames(&self) -> usize {
        self.magnitudes.len()
    }

    pub fn n_bins(&self) -> usize {
        self.window_samples / 2 + 1
    }

    pub fn bin_frequency(&self, bin: usize) -> f64 {
        bin as f64 * self.sample_rate as f64 / self.window_samples as f64
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop_samples as f64
    }
}

/// Periodic Hann window.
pub(crate) fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

fn reflect_index(i: isize, n: usize) -> usize {
    // single reflection suffices because pad < n
    if i < 0 {
        (-i) as usize
    } else if i as usize >= n {
        2 * (n - 1) - i as usize
    } else {
        i as usize
    }
}

pub fn compute_spectrogram(
    audio: &AudioBuffer,
    window_samples: usize,
    hop_samples: usize,
) -> Result<Spectrogram, AudioError> {
    if hop_samples == 0 || window_samples < hop_samples {
        return Err(AudioError::Parameter(format!(
            "need window ({window_samples}) >= hop ({hop_samples}) > 0"
        )));
    }
    let x = audio.samples();
    if x.len() < window_samples {
        return Err(AudioError::TooShort {
            samples: x.len(),
            needed: window_samples,
        });
    }
    let pad = (window_samples / 2) as isize;
    let n_frames = x.len() / hop_samples + 1;
    let window = hann(window_samples);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(window_samples);
    let n_bins = window_samples / 2 + 1;

    let mut buf = vec![Complex64::new(0.0, 0.0); window_samples];
    let mut magnitudes = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let start = (t * hop_samples) as isize - pad;
        for (k, slot) in buf.iter_mut().enumerate() {
            let s = x[reflect_index(start + k as isize, x.len())] as f64;
            *slot = Complex64::new(s * window[k], 0.0);
        }
        fft.process(&mut buf);
        magnitudes.push(buf[..n_bins].iter().map(|c| c.norm()).collect());
    }
    Ok(Spectrogram {
        magnitudes,
        sample_rate: audio.sample_rate(),
        window_samples,
        hop_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SR: u32 = 22050;

    fn sine(freq: f64, seconds: f64) -> AudioBuffer {
        let n = (seconds * SR as f64) as usize;
        let s = (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / SR as f64).sin() as f32 * 0.5)
            .collect();
        AudioBuffer::new(s, SR).unwrap()
    }

    /// O(N²) DFT magnitude of one windowed frame, independent of rustfft.
    fn dft_oracle(frame: &[f64]) -> Vec<f64> {
        let n = frame.len();
        (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (j, &v) in frame.iter().enumerate() {
                    let ang = -2.0 * PI * (k * j) as f64 / n as f64;
                    re += v * ang.cos();
                    im += v * ang.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect()
    }

    #[test]
    fn frame_count_follows_center_padding() {
        let a = AudioBuffer::new(vec![0.0; 22050], SR).unwrap();
        let s = compute_spectrogram(&a, 2048, 512).unwrap();
        // padded length n + 2048, so floor((n + 2048 - 2048) / 512) + 1
        assert_eq!(s.n_frames(), 22050 / 512 + 1);
        assert_eq!(s.magnitudes[0].len(), 1025);
    }

    #[test]
    fn silence_is_all_zero() {
        let a = AudioBuffer::new(vec![0.0; 22050], SR).unwrap();
        let s = compute_spectrogram(&a, 2048, 512).unwrap();
        assert!(s.magnitudes.iter().flatten().all(|&m| m == 0.0));
    }

    #[test]
    fn too_short_is_explicit_error() {
        let a = AudioBuffer::new(vec![0.0; 1000], SR).unwrap();
        assert!(matches!(
            compute_spectrogram(&a, 2048, 512),
            Err(AudioError::TooShort { .. })
        ));
        assert!(compute_spectrogram(&a, 256, 512).is_err());
    }

    #[test]
    fn sine_matches_direct_dft_and_peaks_near_440() {
        let a = sine(440.0, 1.0);
        let s = compute_spectrogram(&a, 2048, 512).unwrap();
        // interior frame 10 has no padding involved
        let t = 10;
        let w = hann(2048);
        let frame: Vec<f64> = (0..2048)
            .map(|k| a.samples()[t * 512 - 1024 + k] as f64 * w[k])
            .collect();
        let oracle = dft_oracle(&frame);
        for (got, want) in s.magnitudes[t].iter().zip(&oracle) {
            assert!((got - want).abs() <= 1e-6 * want.max(1.0));
        }
        for row in &s.magnitudes[2..s.n_frames() - 2] {
            let peak = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert!((s.bin_frequency(peak) - 440.0).abs() < s.bin_frequency(1));
        }
    }

    #[test]
    fn impulse_energy_lands_in_covering_frames() {
        let mut x = vec![0.0f32; 22050];
        let at = 11025; // 0.5 s
        x[at] = 1.0;
        let a = AudioBuffer::new(x, SR).unwrap();
        let s = compute_spectrogram(&a, 2048, 512).unwrap();
        let energy: Vec<f64> = s.magnitudes.iter().map(|r| r.iter().sum()).collect();
        // frame t spans samples [t*512 - 1024, t*512 + 1024)
        for (t, e) in energy.iter().enumerate() {
            let lo = t as isize * 512 - 1024;
            let covers = (lo..lo + 2048).contains(&(at as isize));
            if !covers {
                assert_eq!(*e, 0.0, "frame {t}");
            }
        }
        let best = energy
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        // frame whose center is nearest the impulse: |22*512 - 11025| = 239
        assert_eq!(best, 22);
    }
}
