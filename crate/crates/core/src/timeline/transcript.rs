use serde::{Deserialize, Serialize};

use super::TimelineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyricEvent {
    pub start: f64,
    pub end: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Transcript {
    pub events: Vec<LyricEvent>,
    pub warnings: Vec<String>,
}

#[derive(Deserialize)]
struct RawSegment {
    start: f64,
    end: f64,
    #[serde(default)]
    text: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawTranscript {
    // ASR output: {"text": ..., "segments": [...], ...}
    Document { segments: Vec<RawSegment> },
    Bare(Vec<RawSegment>),
}

/// Parses an ASR transcript (either `{"segments": [...]}` or a bare array of
/// `{start, end, text}`).
///
/// Negative, non-finite, reversed or out-of-order timestamps are rejected
/// with the offending indices. Overlaps are clipped (`end := next.start`)
/// with a warning, and whitespace-only segments are dropped.
pub fn parse_transcript(document: &str) -> Result<Transcript, TimelineError> {
    let raw = match serde_json::from_str::<RawTranscript>(document)? {
        RawTranscript::Document { segments } => segments,
        RawTranscript::Bare(segments) => segments,
    };

    let mut bad = Vec::new();
    for (i, s) in raw.iter().enumerate() {
        let finite = s.start.is_finite() && s.end.is_finite();
        let ordered = finite && s.start >= 0.0 && s.end > s.start;
        let monotonic = i == 0 || s.start > raw[i - 1].start;
        if !ordered || !monotonic {
            bad.push(i);
        }
    }
    if !bad.is_empty() {
        return Err(TimelineError::InvalidTimestamps { indices: bad });
    }

    let mut warnings = Vec::new();
    let mut events: Vec<LyricEvent> = Vec::with_capacity(raw.len());
    for (i, s) in raw.iter().enumerate() {
        let mut end = s.end;
        if let Some(next) = raw.get(i + 1) {
            if next.start < end {
                warnings.push(format!(
                    "segment {i} overlaps segment {}: end clipped from {end} to {}",
                    i + 1,
                    next.start
                ));
                end = next.start;
            }
        }
        let text = s.text.trim();
        if text.is_empty() {
            continue;
        }
        events.push(LyricEvent {
            start: s.start,
            end,
            text: text.to_string(),
        });
    }
    Ok(Transcript { events, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(start: f64, end: f64, text: &str) -> LyricEvent {
        LyricEvent {
            start,
            end,
            text: text.into(),
        }
    }

    #[test]
    fn empty_list() {
        let t = parse_transcript(r#"{"text": "", "segments": []}"#).unwrap();
        assert!(t.events.is_empty() && t.warnings.is_empty());
    }

    #[test]
    fn adjacent_segments_unchanged() {
        let t = parse_transcript(r#"[{"start":0,"end":2,"text":"a"},{"start":2,"end":4,"text":" b "}]"#).unwrap();
        assert_eq!(t.events, vec![ev(0.0, 2.0, "a"), ev(2.0, 4.0, "b")]);
        assert!(t.warnings.is_empty());
    }

    #[test]
    fn overlap_is_clipped_with_warning() {
        let t = parse_transcript(r#"[{"start":0,"end":3,"text":"a"},{"start":2,"end":4,"text":"b"}]"#).unwrap();
        assert_eq!(t.events, vec![ev(0.0, 2.0, "a"), ev(2.0, 4.0, "b")]);
        assert_eq!(t.warnings.len(), 1);
    }

    #[test]
    fn whitespace_only_dropped() {
        let t = parse_transcript(
            r#"{"segments":[{"start":0,"end":1,"text":"  "},{"start":1,"end":2,"text":"x","tokens":[1,2]}]}"#,
        )
        .unwrap();
        assert_eq!(t.events, vec![ev(1.0, 2.0, "x")]);
    }

    #[test]
    fn bad_timestamps_list_indices() {
        let err = parse_transcript(
            r#"[{"start":0,"end":1,"text":"a"},{"start":-1,"end":2,"text":"b"},{"start":3,"end":2.5,"text":"c"},{"start":1,"end":5,"text":"d"}]"#,
        )
        .unwrap_err();
        match err {
            TimelineError::InvalidTimestamps { indices } => assert_eq!(indices, vec![1, 2, 3]),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn malformed_json() {
        assert!(matches!(parse_transcript("{"), Err(TimelineError::Malformed(_))));
    }
}
