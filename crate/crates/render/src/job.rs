//! Render-job records as persisted in `job.json` and `manifest.json`.

use std::path::PathBuf;

use cadence_core::timeline::LoraSpec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum JobStatus {
    Pending,
    Analyzing,
    Compiling,
    Generating,
    Done,
    Failed { reason: String },
}

impl JobStatus {
    /// Position in the forward chain; `Failed` sits outside it.
    pub fn rank(&self) -> Option<u8> {
        match self {
            JobStatus::Pending => Some(0),
            JobStatus::Analyzing => Some(1),
            JobStatus::Compiling => Some(2),
            JobStatus::Generating => Some(3),
            JobStatus::Done => Some(4),
            JobStatus::Failed { .. } => None,
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, JobStatus::Done | JobStatus::Failed { .. })
    }

    /// Forward moves and `→ Failed` from any non-terminal state.
    pub fn can_advance_to(&self, next: &JobStatus) -> bool {
        match (self.rank(), next.rank()) {
            (Some(a), Some(b)) => b > a,
            (Some(_), None) => !self.is_terminal(),
            (None, _) => false,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            JobStatus::Pending => "pending",
            JobStatus::Analyzing => "analyzing",
            JobStatus::Compiling => "compiling",
            JobStatus::Generating => "generating",
            JobStatus::Done => "done",
            JobStatus::Failed { .. } => "failed",
        }
    }
}

/// A transcript given as a file path or inline ASR JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TranscriptSource {
    Path(PathBuf),
    Inline(serde_json::Value),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoraRequest {
    pub id: String,
    #[serde(default)]
    pub scale: Option<f64>,
}

/// What a client submits. Everything except `audio` is optional.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JobRequest {
    pub audio: PathBuf,
    pub transcript: Option<TranscriptSource>,
    /// Defaults to the first registered checkpoint.
    pub checkpoint: Option<String>,
    /// A registered adapter, or `charcha:<session id>` for a verified user.
    pub lora: Option<LoraRequest>,
    /// Shorthand for `lora = { id = "charcha:<session id>" }`.
    pub character_session: Option<String>,
    pub style_preset: Option<String>,
    pub style_tags: Vec<String>,
    pub negative_prompt: Option<String>,
    pub story_hint: Option<String>,
    pub fps: Option<f64>,
    pub master_seed: Option<u64>,
    /// Precomputed `[{window_start, valence, arousal}]`; skips the regressor.
    pub va_track: Option<PathBuf>,
    /// Externally extracted `[{window_start, window_length, vector}]`.
    pub features: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderJob {
    pub id: String,
    pub request: JobRequest,
    pub audio_ref: PathBuf,
    pub checkpoint_id: String,
    pub lora: Option<LoraSpec>,
    /// Verified session whose snapshots personalize this job.
    pub character_session: Option<String>,
    pub fps: f64,
    pub master_seed: u64,
    pub status: JobStatus,
    /// `round(duration × fps)` from the WAV header at submission.
    pub expected_frames: usize,
    pub created_unix_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalRecord {
    pub seq: u64,
    pub unix_ms: u64,
    pub status: JobStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFrame {
    pub index: usize,
    pub time: f64,
    /// Relative to the job directory.
    pub image: String,
    pub segment_index: usize,
    pub keyframe_pair: (usize, usize),
    pub weight: f64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checksums {
    pub algorithm: String,
    /// SHA-256 over the concatenated per-frame hex digests, in frame order.
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameManifest {
    pub job_id: String,
    pub audio_ref: PathBuf,
    pub fps: f64,
    pub duration: f64,
    pub degraded: bool,
    pub frames: Vec<ManifestFrame>,
    pub checksums: Checksums,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobProgress {
    pub id: String,
    pub status: JobStatus,
    pub frames_done: usize,
    pub frames_total: usize,
}
