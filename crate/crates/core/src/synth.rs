//! Synthetic test signals: silence, tones, click tracks, seeded noise.
//! Used by tests and by the CLI to produce reproducible fixtures.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::AudioBuffer;

fn samples_for(seconds: f64, sample_rate: u32) -> usize {
    (seconds * sample_rate as f64).round() as usize
}

pub fn silence(seconds: f64, sample_rate: u32) -> AudioBuffer {
    AudioBuffer::new(vec![0.0; samples_for(seconds, sample_rate)], sample_rate)
        .expect("valid buffer")
}

pub fn sine(freq: f64, seconds: f64, amplitude: f32, sample_rate: u32) -> AudioBuffer {
    let n = samples_for(seconds, sample_rate);
    let samples = (0..n)
        .map(|i| amplitude * (2.0 * PI * freq * i as f64 / sample_rate as f64).sin() as f32)
        .collect();
    AudioBuffer::new(samples, sample_rate).expect("valid buffer")
}

/// Percussive clicks (a 1.5 kHz tone with a 15 ms exponential decay) at the
/// given onset times.
pub fn click_track(click_times: &[f64], seconds: f64, sample_rate: u32) -> AudioBuffer {
    let n = samples_for(seconds, sample_rate);
    let mut samples = vec![0.0f32; n];
    let sr = sample_rate as f64;
    let len = samples_for(0.08, sample_rate);
    for &t in click_times {
        let start = samples_for(t, sample_rate);
        for j in 0..len {
            let Some(s) = samples.get_mut(start + j) else { break };
            let tt = j as f64 / sr;
            *s += (0.8 * (-tt / 0.015).exp() * (2.0 * PI * 1500.0 * tt).sin()) as f32;
        }
    }
    for s in &mut samples {
        *s = s.clamp(-1.0, 1.0);
    }
    AudioBuffer::new(samples, sample_rate).expect("valid buffer")
}

/// Evenly spaced clicks at `bpm`, first click at `offset` seconds.
pub fn metronome(bpm: f64, offset: f64, seconds: f64, sample_rate: u32) -> AudioBuffer {
    let period = 60.0 / bpm;
    let times: Vec<f64> = (0..)
        .map(|k| offset + k as f64 * period)
        .take_while(|&t| t < seconds)
        .collect();
    click_track(&times, seconds, sample_rate)
}

pub fn white_noise(seconds: f64, amplitude: f32, seed: u64, sample_rate: u32) -> AudioBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..samples_for(seconds, sample_rate))
        .map(|_| amplitude * rng.random_range(-1.0f32..=1.0))
        .collect();
    AudioBuffer::new(samples, sample_rate).expect("valid buffer")
}

pub fn scaled(audio: &AudioBuffer, gain: f32) -> AudioBuffer {
    let samples = audio.samples().iter().map(|s| (s * gain).clamp(-1.0, 1.0)).collect();
    AudioBuffer::new(samples, audio.sample_rate()).expect("valid buffer")
}

/// Sample-wise sum, clamped to `[-1, 1]`. Lengths may differ; the result has
/// the longer length.
pub fn mix(a: &AudioBuffer, b: &AudioBuffer) -> AudioBuffer {
    let n = a.len().max(b.len());
    let samples = (0..n)
        .map(|i| {
            let x = a.samples().get(i).copied().unwrap_or(0.0);
            let y = b.samples().get(i).copied().unwrap_or(0.0);
            (x + y).clamp(-1.0, 1.0)
        })
        .collect();
    AudioBuffer::new(samples, a.sample_rate()).expect("valid buffer")
}

/// A small "song": a 120 BPM click track over a sustained chord that changes
/// at the halfway point.
pub fn demo_song(seconds: f64, sample_rate: u32) -> AudioBuffer {
    let beat = metronome(120.0, 0.25, seconds, sample_rate);
    let half = seconds / 2.0;
    let n = samples_for(seconds, sample_rate);
    let sr = sample_rate as f64;
    let pad: Vec<f32> = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let freqs: [f64; 3] = if t < half {
                [220.0, 277.18, 329.63]
            } else {
                [196.0, 233.08, 293.66]
            };
            let v: f64 = freqs.iter().map(|f| (2.0 * PI * f * t).sin()).sum::<f64>() / 3.0;
            (0.15 * v) as f32
        })
        .collect();
    let pad = AudioBuffer::new(pad, sample_rate).expect("valid buffer");
    mix(&beat, &pad)
}
