//! Keyframe interpolation: spherical interpolation between latents and a
//! per-frame schedule whose weights advance with onset mass, so transitions
//! are fast on busy passages and slow on quiet ones.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::OnsetEnvelope;
use crate::seed;
use crate::timeline::PromptScript;

#[derive(Debug, Error, PartialEq)]
pub enum InterpError {
    #[error("latent dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("zero latent vector")]
    ZeroVector,
    #[error("non-finite latent or parameter")]
    NonFinite,
    #[error("invalid schedule input: {0}")]
    Invalid(String),
}

/// `|cos θ|` above this interpolates linearly.
pub const PARALLEL_THRESHOLD: f64 = 1.0 - 1e-7;

/// Spherical interpolation. `t` is clamped to `[0, 1]`; the endpoints are
/// returned exactly.
pub fn slerp(v0: &[f64], v1: &[f64], t: f64) -> Result<Vec<f64>, InterpError> {
    if v0.len() != v1.len() {
        return Err(InterpError::Dimension(v0.len(), v1.len()));
    }
    if !t.is_finite() || v0.iter().chain(v1).any(|x| !x.is_finite()) {
        return Err(InterpError::NonFinite);
    }
    let n0 = norm(v0);
    let n1 = norm(v1);
    if n0 == 0.0 || n1 == 0.0 {
        return Err(InterpError::ZeroVector);
    }
    let t = t.clamp(0.0, 1.0);
    if t == 0.0 {
        return Ok(v0.to_vec());
    }
    if t == 1.0 {
        return Ok(v1.to_vec());
    }

    let cos = (dot(v0, v1) / (n0 * n1)).clamp(-1.0, 1.0);
    if cos.abs() > PARALLEL_THRESHOLD {
        // lerp, rescaled to the interpolated norm
        let mut out: Vec<f64> = v0.iter().zip(v1).map(|(a, b)| (1.0 - t) * a + t * b).collect();
        let target = (1.0 - t) * n0 + t * n1;
        let n = norm(&out);
        if n > 0.0 {
            out.iter_mut().for_each(|x| *x *= target / n);
        } else {
            // antiparallel at the midpoint; nothing sensible to normalize
            return Ok(v0.iter().zip(v1).map(|(a, b)| (1.0 - t) * a + t * b).collect());
        }
        return Ok(out);
    }
    let theta = cos.acos();
    let s = theta.sin();
    let a = ((1.0 - t) * theta).sin() / s;
    let b = (t * theta).sin() / s;
    Ok(v0.iter().zip(v1).map(|(x, y)| a * x + b * y).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn resample_linear(values: &[f64], n: usize) -> Vec<f64> {
    match values.len() {
        0 => vec![0.0; n],
        1 => vec![values[0]; n],
        m => (0..n)
            .map(|k| {
                let pos = if n == 1 { 0.0 } else { k as f64 * (m - 1) as f64 / (n - 1) as f64 };
                let i = (pos.floor() as usize).min(m - 2);
                let frac = pos - i as f64;
                values[i] * (1.0 - frac) + values[i + 1] * frac
            })
            .collect(),
    }
}

/// Default additive floor for a slice: 1e-3 of its peak, or 1e-6 if silent.
pub fn default_floor(slice: &[f64]) -> f64 {
    let max = slice.iter().copied().fold(0.0f64, f64::max);
    if max > 0.0 {
        1e-3 * max
    } else {
        1e-6
    }
}

/// Cumulative onset mass over `n_frames`, re-based so the first weight is 0
/// and the last is 1. `floor` defaults to [`default_floor`].
pub fn onset_weights(slice: &[f64], n_frames: usize, floor: Option<f64>) -> Vec<f64> {
    if n_frames == 0 {
        return Vec::new();
    }
    if n_frames == 1 {
        return vec![1.0];
    }
    let floor = floor
        .filter(|f| *f > 0.0 && f.is_finite())
        .unwrap_or_else(|| default_floor(slice));
    let mass: Vec<f64> = resample_linear(slice, n_frames)
        .into_iter()
        .map(|o| o.max(0.0) + floor)
        .collect();
    let total: f64 = mass[1..].iter().sum();
    let mut acc = 0.0;
    let mut w = Vec::with_capacity(n_frames);
    w.push(0.0);
    for m in &mass[1..] {
        acc += m;
        w.push((acc / total).min(1.0));
    }
    *w.last_mut().expect("n >= 2") = 1.0;
    w
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    /// Global frame index.
    pub frame: usize,
    pub time: f64,
    pub segment_index: usize,
    pub keyframe_pair: (usize, usize),
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeSpec {
    pub index: usize,
    /// Segment whose prompt produces this keyframe.
    pub segment_index: usize,
    pub seed: u64,
    /// The extra keyframe the last segment interpolates toward.
    pub closure: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSchedule {
    pub fps: f64,
    pub keyframes: Vec<KeyframeSpec>,
    pub entries: Vec<ScheduleEntry>,
}

impl FrameSchedule {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

/// Frames per segment: `max(1, round(len × fps))`, with the last segment
/// absorbing drift so the total is `round(duration × fps)` where possible.
pub fn segment_frame_counts(bounds: &[(f64, f64)], fps: f64) -> Vec<usize> {
    let mut counts: Vec<usize> = bounds
        .iter()
        .map(|(s, e)| round_half_up((e - s) * fps).max(1))
        .collect();
    if let (Some(first), Some(last)) = (bounds.first(), bounds.last()) {
        let target = round_half_up((last.1 - first.0) * fps);
        let before: usize = counts[..counts.len() - 1].iter().sum();
        *counts.last_mut().expect("non-empty") = target.saturating_sub(before).max(1);
    }
    counts
}

pub fn build_frame_schedule(
    script: &PromptScript,
    fps: f64,
    envelope: &OnsetEnvelope,
) -> Result<FrameSchedule, InterpError> {
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(InterpError::Invalid(format!("fps must be positive, got {fps}")));
    }
    if script.segments.is_empty() {
        return Err(InterpError::Invalid("script has no segments".into()));
    }
    let duration = script.segments.last().expect("non-empty").end;
    if envelope.coverage() + 1e-9 < duration {
        return Err(InterpError::Invalid(format!(
            "onset envelope covers {:.3} s but the script lasts {:.3} s",
            envelope.coverage(),
            duration
        )));
    }

    let n_seg = script.segments.len();
    let mut keyframes: Vec<KeyframeSpec> = script
        .segments
        .iter()
        .enumerate()
        .map(|(i, s)| KeyframeSpec {
            index: i,
            segment_index: i,
            seed: s.seed,
            closure: false,
        })
        .collect();
    let last = &script.segments[n_seg - 1];
    keyframes.push(KeyframeSpec {
        index: n_seg,
        segment_index: n_seg - 1,
        seed: seed::derive_named(last.seed, "closure"),
        closure: true,
    });

    let bounds: Vec<(f64, f64)> = script.segments.iter().map(|s| (s.start, s.end)).collect();
    let counts = segment_frame_counts(&bounds, fps);
    let mut entries = Vec::with_capacity(counts.iter().sum());
    for (i, (seg, &n)) in script.segments.iter().zip(&counts).enumerate() {
        let weights = onset_weights(envelope.slice(seg.start, seg.end), n, None);
        for w in weights {
            let frame = entries.len();
            entries.push(ScheduleEntry {
                frame,
                time: frame as f64 / fps,
                segment_index: i,
                keyframe_pair: (i, i + 1),
                weight: w,
            });
        }
    }
    Ok(FrameSchedule {
        fps,
        keyframes,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emotion::EmotionQuadrant;
    use crate::timeline::{compile_script, MergedInterval, ScriptConfig};
    use proptest::prelude::*;

    fn unit(v: Vec<f64>) -> Vec<f64> {
        let n = norm(&v);
        v.into_iter().map(|x| x / n).collect()
    }

    #[test]
    fn slerp_endpoints_exact() {
        let a = vec![0.3, -1.2, 2.0];
        let b = vec![1.0, 0.5, -0.1];
        assert_eq!(slerp(&a, &b, 0.0).unwrap(), a);
        assert_eq!(slerp(&a, &b, 1.0).unwrap(), b);
    }

    #[test]
    fn slerp_orthogonal_midpoint() {
        let r = slerp(&[1.0, 0.0], &[0.0, 1.0], 0.5).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((r[0] - h).abs() < 1e-12 && (r[1] - h).abs() < 1e-12);
    }

    #[test]
    fn slerp_identical_inputs() {
        let a = vec![0.6, 0.8];
        for k in 0..=10 {
            let r = slerp(&a, &a, k as f64 / 10.0).unwrap();
            assert!((r[0] - 0.6).abs() < 1e-15 && (r[1] - 0.8).abs() < 1e-15);
        }
    }

    #[test]
    fn slerp_errors() {
        assert_eq!(slerp(&[1.0], &[1.0, 0.0], 0.5), Err(InterpError::Dimension(1, 2)));
        assert_eq!(slerp(&[0.0, 0.0], &[1.0, 0.0], 0.5), Err(InterpError::ZeroVector));
    }

    #[test]
    fn weights_uniform_for_constant_envelope() {
        let w = onset_weights(&[2.0; 7], 5, None);
        for (a, b) in w.iter().zip([0.0, 0.25, 0.5, 0.75, 1.0]) {
            assert!((a - b).abs() < 1e-12, "{w:?}");
        }
        let w = onset_weights(&[0.0; 7], 5, None);
        assert!((w[2] - 0.5).abs() < 1e-12);
        assert_eq!(onset_weights(&[1.0], 1, None), vec![1.0]);
    }

    #[test]
    fn weights_jump_at_impulse() {
        let floor = 1.0;
        let w = onset_weights(&[0.0, 0.0, 100.0, 0.0, 0.0], 5, Some(floor));
        // oracle: step masses f, 101f, f, f over a total of 104f
        let expected = [0.0, 1.0 / 104.0, 102.0 / 104.0, 103.0 / 104.0, 1.0];
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(w[2] - w[1] >= 0.8);
    }

    #[test]
    fn frame_counts_correct_drift() {
        // 3 × 1/3 s at 10 fps: 3 + 3 + 3 = 9 but round(1.0 × 10) = 10
        let b = [(0.0, 1.0 / 3.0), (1.0 / 3.0, 2.0 / 3.0), (2.0 / 3.0, 1.0)];
        assert_eq!(segment_frame_counts(&b, 10.0), vec![3, 3, 4]);
        assert_eq!(segment_frame_counts(&[(0.0, 10.0)], 12.0), vec![120]);
    }

    fn script(lens: &[f64]) -> PromptScript {
        let mut t = 0.0;
        let segs: Vec<MergedInterval> = lens
            .iter()
            .map(|l| {
                let s = MergedInterval {
                    start: t,
                    end: t + l,
                    lyric: None,
                    emotion: EmotionQuadrant::Serene,
                };
                t += l;
                s
            })
            .collect();
        compile_script(&segs, None, &ScriptConfig::new("base", 9), t).unwrap()
    }

    fn envelope(seconds: f64, f: impl Fn(f64) -> f64) -> OnsetEnvelope {
        let rate = 22050.0 / 512.0;
        let n = (seconds * rate).ceil() as usize + 1;
        OnsetEnvelope::new((0..n).map(|i| f(i as f64 / rate)).collect(), rate)
    }

    #[test]
    fn schedule_pairs_and_counts() {
        let s = script(&[10.0, 5.0]);
        let sched = build_frame_schedule(&s, 12.0, &envelope(15.0, |_| 1.0)).unwrap();
        assert_eq!(sched.len(), 180);
        assert_eq!(sched.entries.iter().filter(|e| e.segment_index == 0).count(), 120);
        assert_eq!(sched.entries[0].keyframe_pair, (0, 1));
        assert_eq!(sched.entries[179].keyframe_pair, (1, 2));
        assert_eq!(sched.keyframes.len(), 3);
        assert!(sched.keyframes[2].closure);
        assert_ne!(sched.keyframes[2].seed, sched.keyframes[1].seed);
        assert_eq!(sched.entries[120].weight, 0.0);
        assert_eq!(sched.entries[119].weight, 1.0);
    }

    #[test]
    fn short_envelope_rejected() {
        let s = script(&[10.0]);
        assert!(matches!(
            build_frame_schedule(&s, 12.0, &envelope(5.0, |_| 1.0)),
            Err(InterpError::Invalid(_))
        ));
    }

    #[test]
    fn weight_crosses_half_late_for_back_loaded_mass() {
        let s = script(&[8.0]);
        let env = envelope(8.0, |t| if t >= 4.0 { 5.0 } else { 0.05 });
        let sched = build_frame_schedule(&s, 12.0, &env).unwrap();
        let n = sched.len();
        let cross = sched.entries.iter().position(|e| e.weight >= 0.5).unwrap();
        assert!(cross >= n / 2, "crossed at {cross} of {n}");
    }

    fn arb_unit(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1.0f64..1.0, dim)
            .prop_filter("nonzero", |v| norm(v) > 1e-3)
            .prop_map(unit)
    }

    proptest! {
        #[test]
        fn slerp_unit_norm_and_symmetry(a in arb_unit(16), b in arb_unit(16)) {
            for k in 0..100 {
                let t = k as f64 / 99.0;
                let r = slerp(&a, &b, t).unwrap();
                prop_assert!((norm(&r) - 1.0).abs() <= 1e-6);
                let r2 = slerp(&b, &a, 1.0 - t).unwrap();
                for (x, y) in r.iter().zip(&r2) {
                    prop_assert!((x - y).abs() <= 1e-6);
                }
            }
        }

        #[test]
        fn weights_monotone_and_normalized(
            env in prop::collection::vec(0.0f64..10.0, 0..50),
            n in 1usize..200,
        ) {
            let w = onset_weights(&env, n, None);
            prop_assert_eq!(w.len(), n);
            prop_assert_eq!(*w.last().unwrap(), 1.0);
            if n > 1 {
                prop_assert_eq!(w[0], 0.0);
            }
            for p in w.windows(2) {
                prop_assert!(p[1] >= p[0]);
            }
        }

        #[test]
        fn schedule_structure(
            lens in prop::collection::vec(0.5f64..6.0, 1..8),
            fps in prop::sample::select(vec![8.0, 12.0, 24.0, 30.0]),
        ) {
            let s = script(&lens);
            let total: f64 = lens.iter().sum();
            let env = envelope(total, |t| (t * 3.0).sin().abs());
            let sched = build_frame_schedule(&s, fps, &env).unwrap();
            prop_assert_eq!(sched.clone(), build_frame_schedule(&s, fps, &env).unwrap());
            prop_assert_eq!(sched.len(), round_half_up(s.duration * fps));
            for (i, e) in sched.entries.iter().enumerate() {
                prop_assert_eq!(e.frame, i);
                prop_assert_eq!(e.keyframe_pair, (e.segment_index, e.segment_index + 1));
            }
            for w in sched.entries.windows(2) {
                prop_assert!(w[1].time > w[0].time);
                prop_assert!(((w[1].time - w[0].time) - 1.0 / fps).abs() < 1e-9);
                if w[0].segment_index == w[1].segment_index {
                    prop_assert!(w[1].weight >= w[0].weight);
                } else {
                    prop_assert_eq!(w[0].weight, 1.0);
                }
            }
        }
    }
}
