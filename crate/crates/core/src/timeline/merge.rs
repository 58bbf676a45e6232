use serde::{Deserialize, Serialize};

use super::LyricEvent;
use crate::audio::BeatGrid;
use crate::emotion::{EmotionEvent, EmotionQuadrant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeConfig {
    /// Boundaries move to the nearest beat only if it is this close (seconds).
    pub snap_tolerance: f64,
    /// Shorter intervals are absorbed into their predecessor.
    pub min_segment: f64,
    /// Emotion used when no emotion event precedes an interval.
    pub default_emotion: EmotionQuadrant,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self {
            snap_tolerance: 0.25,
            min_segment: 0.5,
            default_emotion: EmotionQuadrant::Serene,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedInterval {
    pub start: f64,
    pub end: f64,
    /// `None` for instrumental stretches.
    pub lyric: Option<String>,
    pub emotion: EmotionQuadrant,
}

const EPS: f64 = 1e-9;

/// Unsnapped boundary set: 0, `duration`, every lyric start/end and every
/// emotion-event time, clamped to `[0, duration]`, sorted and deduplicated.
pub fn boundary_candidates(
    lyrics: &[LyricEvent],
    emotions: &[EmotionEvent],
    duration: f64,
) -> Vec<f64> {
    let mut b: Vec<f64> = [0.0, duration]
        .into_iter()
        .chain(lyrics.iter().flat_map(|l| [l.start, l.end]))
        .chain(emotions.iter().map(|e| e.time))
        .map(|t| t.clamp(0.0, duration))
        .collect();
    b.sort_by(f64::total_cmp);
    b.dedup_by(|a, b| (*a - *b).abs() <= EPS);
    b
}

pub fn merge_events(
    lyrics: &[LyricEvent],
    emotions: &[EmotionEvent],
    beats: &BeatGrid,
    duration: f64,
    config: &MergeConfig,
) -> Vec<MergedInterval> {
    let candidates = boundary_candidates(lyrics, emotions, duration);

    // 0 and duration are pinned so the segments always tile the track
    let mut bounds: Vec<f64> = candidates
        .iter()
        .map(|&t| {
            if t <= 0.0 || t >= duration {
                return t;
            }
            match beats.nearest(t) {
                Some(b) if (b - t).abs() <= config.snap_tolerance => b.clamp(0.0, duration),
                _ => t,
            }
        })
        .collect();
    bounds.dedup_by(|a, b| (*a - *b).abs() <= EPS);

    // absorb short intervals; the first interval is absorbed forward
    loop {
        if bounds.len() <= 2 {
            break;
        }
        let short = bounds
            .windows(2)
            .position(|w| w[1] - w[0] < config.min_segment);
        match short {
            None => break,
            Some(0) => {
                bounds.remove(1);
            }
            Some(i) => {
                bounds.remove(i);
            }
        }
    }
    if bounds.len() < 2 {
        bounds = vec![0.0, duration];
    }
    // exact endpoints regardless of float dedup above
    bounds[0] = 0.0;
    *bounds.last_mut().expect("non-empty") = duration;

    bounds
        .windows(2)
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            let lyric = lyrics
                .iter()
                .find(|l| l.start <= mid && mid < l.end)
                .map(|l| l.text.clone());
            let emotion = emotions
                .iter()
                .take_while(|e| e.time <= mid)
                .last()
                .map(|e| e.quadrant)
                .unwrap_or(config.default_emotion);
            MergedInterval {
                start: w[0],
                end: w[1],
                lyric,
                emotion,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lyric(start: f64, end: f64, text: &str) -> LyricEvent {
        LyricEvent {
            start,
            end,
            text: text.into(),
        }
    }

    fn emo(time: f64, quadrant: EmotionQuadrant) -> EmotionEvent {
        EmotionEvent { time, quadrant }
    }

    #[test]
    fn nothing_gives_one_instrumental_segment() {
        let m = merge_events(&[], &[], &BeatGrid::default(), 30.0, &MergeConfig::default());
        assert_eq!(
            m,
            vec![MergedInterval {
                start: 0.0,
                end: 30.0,
                lyric: None,
                emotion: EmotionQuadrant::Serene
            }]
        );
    }

    #[test]
    fn boundary_snaps_to_nearby_beat() {
        let beats = BeatGrid::new(vec![5.0, 10.0, 15.0]);
        let m = merge_events(&[lyric(10.1, 20.0, "x")], &[], &beats, 30.0, &MergeConfig::default());
        let starts: Vec<f64> = m.iter().map(|s| s.start).collect();
        assert_eq!(starts, vec![0.0, 10.0, 20.0]);
        assert_eq!(m[1].lyric.as_deref(), Some("x"));
        assert_eq!(m[0].lyric, None);
    }

    #[test]
    fn far_beat_leaves_boundary_alone() {
        let beats = BeatGrid::new(vec![10.0]);
        let m = merge_events(&[lyric(10.4, 20.0, "x")], &[], &beats, 30.0, &MergeConfig::default());
        assert_eq!(m[1].start, 10.4);
    }

    #[test]
    fn coincident_lyric_and_emotion_change_is_one_boundary() {
        let m = merge_events(
            &[lyric(0.0, 5.0, "a"), lyric(5.0, 10.0, "b")],
            &[emo(0.0, EmotionQuadrant::Serene), emo(5.0, EmotionQuadrant::Tense)],
            &BeatGrid::default(),
            10.0,
            &MergeConfig::default(),
        );
        assert_eq!(m.len(), 2);
        assert_eq!(m[1].start, 5.0);
        assert_eq!(m[1].emotion, EmotionQuadrant::Tense);
        assert_eq!(m[0].emotion, EmotionQuadrant::Serene);
    }

    #[test]
    fn short_interval_is_absorbed() {
        let m = merge_events(
            &[lyric(2.0, 5.0, "a"), lyric(5.0, 5.3, "b"), lyric(5.3, 9.0, "c")],
            &[],
            &BeatGrid::default(),
            10.0,
            &MergeConfig::default(),
        );
        let bounds: Vec<(f64, f64)> = m.iter().map(|s| (s.start, s.end)).collect();
        assert_eq!(bounds, vec![(0.0, 2.0), (2.0, 5.3), (5.3, 9.0), (9.0, 10.0)]);
    }

    #[test]
    fn collisions_after_snapping_merge() {
        let beats = BeatGrid::new(vec![4.0]);
        let m = merge_events(
            &[lyric(3.8, 9.0, "a")],
            &[emo(4.1, EmotionQuadrant::Tense)],
            &beats,
            10.0,
            &MergeConfig::default(),
        );
        let starts: Vec<f64> = m.iter().map(|s| s.start).collect();
        assert_eq!(starts, vec![0.0, 4.0, 9.0]);
    }

    fn arb_inputs() -> impl Strategy<Value = (Vec<LyricEvent>, Vec<EmotionEvent>, BeatGrid, f64)> {
        (
            prop::collection::vec((0.0f64..60.0, 0.1f64..6.0), 0..12),
            prop::collection::vec((0.0f64..60.0, 0usize..4), 0..8),
            prop::collection::vec(0.0f64..60.0, 0..80),
        )
            .prop_map(|(ls, es, bs)| {
                let mut ls = ls;
                ls.sort_by(|a, b| a.0.total_cmp(&b.0));
                let mut lyrics: Vec<LyricEvent> = Vec::new();
                for (s, len) in ls {
                    let s = lyrics.last().map_or(s, |p: &LyricEvent| s.max(p.end));
                    lyrics.push(lyric(s, s + len, "l"));
                }
                let mut es = es;
                es.sort_by(|a, b| a.0.total_cmp(&b.0));
                let emotions = es.into_iter().map(|(t, q)| emo(t, EmotionQuadrant::ALL[q])).collect();
                let duration = lyrics.last().map_or(60.0, |l| l.end.max(60.0));
                (lyrics, emotions, BeatGrid::new(bs), duration)
            })
    }

    proptest! {
        #[test]
        fn segments_tile_and_respect_snapping(
            (lyrics, emotions, beats, duration) in arb_inputs()
        ) {
            let cfg = MergeConfig::default();
            let m = merge_events(&lyrics, &emotions, &beats, duration, &cfg);
            prop_assert!(!m.is_empty());
            prop_assert_eq!(m[0].start, 0.0);
            prop_assert_eq!(m.last().unwrap().end, duration);
            for w in m.windows(2) {
                prop_assert_eq!(w[0].end, w[1].start);
            }
            for s in &m {
                prop_assert!(s.end > s.start);
            }
            if m.len() > 1 {
                for s in &m {
                    prop_assert!(s.end - s.start >= cfg.min_segment - 1e-9);
                }
            }
            // every final boundary is a candidate moved by at most the tolerance
            let cands = boundary_candidates(&lyrics, &emotions, duration);
            for s in &m[1..] {
                let moved = cands.iter().map(|c| (c - s.start).abs()).fold(f64::INFINITY, f64::min);
                prop_assert!(moved <= cfg.snap_tolerance + 1e-9);
            }
            // every lyric and emotion change is in the pre-snap set
            for l in &lyrics {
                prop_assert!(cands.iter().any(|c| (c - l.start.min(duration)).abs() <= 1e-9));
            }
            for e in &emotions {
                prop_assert!(cands.iter().any(|c| (c - e.time.min(duration)).abs() <= 1e-9));
            }
        }
    }
}
