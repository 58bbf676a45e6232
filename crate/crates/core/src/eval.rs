//! Evaluation metrics over rendered frames: how often the participant's face
//! is recognized, and how close each second of video is to the reference
//! snapshots in an image-embedding space.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no frames to evaluate")]
    Empty,
    #[error("frame {0} is verified but has no face")]
    Inconsistent(usize),
    #[error("embedding dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("zero-norm embedding")]
    ZeroNorm,
    #[error("no reference embeddings")]
    NoReferences,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameVerification {
    pub frame_index: usize,
    pub face_present: bool,
    /// The participant's face was matched in this frame.
    pub verified: bool,
}

/// A percentage that is undefined when its denominator is zero. Serialized
/// as a number or the string `"undefined"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Percent(pub Option<f64>);

impl Serialize for Percent {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.0 {
            Some(v) => s.serialize_f64(v),
            None => s.serialize_str("undefined"),
        }
    }
}

impl<'de> Deserialize<'de> for Percent {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Percent(Some(v))),
            Raw::Str(s) if s == "undefined" => Ok(Percent(None)),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("expected a number or \"undefined\", got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub total_frames: usize,
    pub pct_frames_with_participant: f64,
    pub pct_frames_no_face: f64,
    /// verified / (total − no_face) × 100.
    pub pct_face_frames_with_participant: Percent,
}

pub fn face_frame_metrics(frames: &[FrameVerification]) -> Result<VerificationReport, EvalError> {
    if frames.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some(f) = frames.iter().find(|f| f.verified && !f.face_present) {
        return Err(EvalError::Inconsistent(f.frame_index));
    }
    let total = frames.len();
    let verified = frames.iter().filter(|f| f.verified).count();
    let no_face = frames.iter().filter(|f| !f.face_present).count();
    let pct = |n: usize, d: usize| n as f64 / d as f64 * 100.0;
    let with_face = total - no_face;
    Ok(VerificationReport {
        total_frames: total,
        pct_frames_with_participant: pct(verified, total),
        pct_frames_no_face: pct(no_face, total),
        pct_face_frames_with_participant: Percent((with_face > 0).then(|| pct(verified, with_face))),
    })
}

fn cosine(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::Dimension(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(EvalError::ZeroNorm);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Mean cosine similarity between a frame embedding and every reference.
pub fn character_similarity(frame: &[f64], references: &[Vec<f64>]) -> Result<f64, EvalError> {
    if references.is_empty() {
        return Err(EvalError::NoReferences);
    }
    let sum = references
        .iter()
        .map(|r| cosine(frame, r))
        .sum::<Result<f64, _>>()?;
    Ok(sum / references.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityPoint {
    pub t: f64,
    /// `None` marks a gap (the embedding could not be computed).
    pub character_similarity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTrack {
    pub participant: String,
    pub points: Vec<SimilarityPoint>,
}

impl SimilarityTrack {
    /// Builds a track from per-second embeddings; `None` entries become gaps.
    pub fn from_embeddings(
        participant: impl Into<String>,
        per_second: &[(f64, Option<Vec<f64>>)],
        references: &[Vec<f64>],
    ) -> Result<Self, EvalError> {
        let points = per_second
            .iter()
            .map(|(t, e)| {
                Ok(SimilarityPoint {
                    t: *t,
                    character_similarity: match e {
                        Some(e) => Some(character_similarity(e, references)?),
                        None => None,
                    },
                })
            })
            .collect::<Result<_, EvalError>>()?;
        Ok(Self {
            participant: participant.into(),
            points,
        })
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().filter_map(|p| p.character_similarity).collect()
    }

    pub fn gaps(&self) -> usize {
        self.points.iter().filter(|p| p.character_similarity.is_none()).count()
    }
}

pub const REPLICATION_MAX_VARIANCE: f64 = 1e-4;
pub const REPLICATION_MIN_MEAN: f64 = 0.98;

/// An almost constant, almost perfect track suggests the generator is
/// reproducing the references instead of generating.
pub fn replication_flag(track: &SimilarityTrack) -> bool {
    let v = track.values();
    if v.is_empty() {
        return false;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    var < REPLICATION_MAX_VARIANCE && mean > REPLICATION_MIN_MEAN
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSummary {
    pub mean: Vec<SimilarityPoint>,
    /// `(participant, L2 distance from the mean track)` in input order.
    pub deviations: Vec<(String, f64)>,
    /// Ties go to the earlier participant.
    pub max_deviation: Option<String>,
    pub min_deviation: Option<String>,
    pub replication_flags: Vec<String>,
}

/// Cross-participant summary. Tracks are aligned by position; gaps are left
/// out of both the mean and the distances.
pub fn summarize_tracks(tracks: &[SimilarityTrack]) -> TrackSummary {
    let len = tracks.iter().map(|t| t.points.len()).max().unwrap_or(0);
    let mean: Vec<SimilarityPoint> = (0..len)
        .map(|i| {
            let vals: Vec<f64> = tracks
                .iter()
                .filter_map(|t| t.points.get(i).and_then(|p| p.character_similarity))
                .collect();
            let t = tracks.iter().find_map(|tr| tr.points.get(i).map(|p| p.t)).unwrap_or(i as f64);
            SimilarityPoint {
                t,
                character_similarity: (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64),
            }
        })
        .collect();

    let deviations: Vec<(String, f64)> = tracks
        .iter()
        .map(|tr| {
            let d2: f64 = tr
                .points
                .iter()
                .zip(&mean)
                .filter_map(|(p, m)| Some((p.character_similarity? - m.character_similarity?).powi(2)))
                .sum();
            (tr.participant.clone(), d2.sqrt())
        })
        .collect();
    let pick = |better: fn(f64, f64) -> bool| {
        deviations
            .iter()
            .fold(None::<&(String, f64)>, |best, d| match best {
                Some(b) if !better(d.1, b.1) => Some(b),
                _ => Some(d),
            })
            .map(|d| d.0.clone())
    };
    TrackSummary {
        max_deviation: pick(|a, b| a > b),
        min_deviation: pick(|a, b| a < b),
        replication_flags: tracks
            .iter()
            .filter(|t| replication_flag(t))
            .map(|t| t.participant.clone())
            .collect(),
        mean,
        deviations,
    }
}
