//! Per-job directories:
//!
//! ```text
//! jobs/<id>/job.json          current RenderJob
//! jobs/<id>/journal.jsonl     one JournalRecord per status transition
//! jobs/<id>/analysis.json     audio analysis + emotion events
//! jobs/<id>/script.json       PromptScript
//! jobs/<id>/schedule.json     FrameSchedule
//! jobs/<id>/keyframes/K.json  one vector per keyframe
//! jobs/<id>/frames/NNNNNN.png
//! jobs/<id>/manifest.json
//! ```
//!
//! Every file except the journal is written to a temporary sibling and
//! renamed, so a reader never observes a partial file.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::job::{JobStatus, JournalRecord, RenderJob};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("job {0} not found")]
    NotFound(String),
    #[error("job {0} already exists")]
    Exists(String),
    #[error("invalid job id {0:?}")]
    InvalidId(String),
    #[error("job {id}: cannot move from {from} to {to}")]
    Transition { id: String, from: String, to: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Ids are 1–64 characters of `[A-Za-z0-9_-]`, which keeps them safe as
/// directory names.
pub fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("file");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn write_json_atomic<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), StoreError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| StoreError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// `Ok(None)` when the file does not exist.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<Option<T>, StoreError> {
    match fs::read(path) {
        Ok(bytes) => serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|source| StoreError::Json {
                path: path.to_path_buf(),
                source,
            }),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(io_err(path)(e)),
    }
}

#[derive(Debug, Clone)]
pub struct JobStore {
    root: PathBuf,
}

impl JobStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn job_dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    pub fn path(&self, id: &str, name: &str) -> PathBuf {
        self.job_dir(id).join(name)
    }

    pub fn frame_name(index: usize) -> String {
        format!("frames/{index:06}.png")
    }

    pub fn frame_path(&self, id: &str, index: usize) -> PathBuf {
        self.path(id, &Self::frame_name(index))
    }

    pub fn keyframe_path(&self, id: &str, index: usize) -> PathBuf {
        self.path(id, &format!("keyframes/{index:04}.json"))
    }

    pub fn exists(&self, id: &str) -> bool {
        valid_id(id) && self.path(id, "job.json").is_file()
    }

    /// Persists a new job and its first journal record.
    pub fn create(&self, job: &RenderJob) -> Result<(), StoreError> {
        if !valid_id(&job.id) {
            return Err(StoreError::InvalidId(job.id.clone()));
        }
        let dir = self.job_dir(&job.id);
        match fs::create_dir(&dir) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => return Err(StoreError::Exists(job.id.clone())),
            Err(e) => return Err(io_err(&dir)(e)),
        }
        write_json_atomic(&dir.join("job.json"), job)?;
        self.append_journal(&job.id, &job.status)
    }

    pub fn load(&self, id: &str) -> Result<RenderJob, StoreError> {
        if !valid_id(id) {
            return Err(StoreError::NotFound(id.to_string()));
        }
        read_json(&self.path(id, "job.json"))?.ok_or_else(|| StoreError::NotFound(id.to_string()))
    }

    /// Moves `job` to `next`, rewriting `job.json` and appending to the
    /// journal. Backward moves are rejected.
    pub fn set_status(&self, job: &mut RenderJob, next: JobStatus) -> Result<(), StoreError> {
        if !job.status.can_advance_to(&next) {
            return Err(StoreError::Transition {
                id: job.id.clone(),
                from: job.status.label().into(),
                to: next.label().into(),
            });
        }
        job.status = next;
        write_json_atomic(&self.path(&job.id, "job.json"), job)?;
        self.append_journal(&job.id, &job.status)
    }

    fn append_journal(&self, id: &str, status: &JobStatus) -> Result<(), StoreError> {
        let path = self.path(id, "journal.jsonl");
        let seq = self.journal(id)?.len() as u64;
        let rec = JournalRecord {
            seq,
            unix_ms: unix_ms(),
            status: status.clone(),
        };
        let mut line = serde_json::to_string(&rec).expect("record serializes");
        line.push('\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        f.write_all(line.as_bytes()).map_err(io_err(&path))?;
        f.sync_all().map_err(io_err(&path))
    }

    /// Journal records in order. A torn final line (crash mid-append) is
    /// ignored.
    pub fn journal(&self, id: &str) -> Result<Vec<JournalRecord>, StoreError> {
        let path = self.path(id, "journal.jsonl");
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&path)(e)),
        };
        Ok(text
            .lines()
            .filter_map(|l| serde_json::from_str::<JournalRecord>(l).ok())
            .collect())
    }

    /// Status as reconstructed from the journal alone.
    pub fn replay_journal(&self, id: &str) -> Result<JobStatus, StoreError> {
        self.journal(id)?
            .into_iter()
            .last()
            .map(|r| r.status)
            .ok_or_else(|| StoreError::NotFound(id.to_string()))
    }

    pub fn write_artifact<T: Serialize + ?Sized>(&self, id: &str, name: &str, value: &T) -> Result<(), StoreError> {
        write_json_atomic(&self.path(id, name), value)
    }

    pub fn read_artifact<T: DeserializeOwned>(&self, id: &str, name: &str) -> Result<Option<T>, StoreError> {
        read_json(&self.path(id, name))
    }

    /// Number of frame files on disk.
    pub fn frames_on_disk(&self, id: &str) -> usize {
        fs::read_dir(self.path(id, "frames"))
            .map(|rd| {
                rd.filter_map(Result::ok)
                    .filter(|e| e.file_name().to_str().is_some_and(|n| n.ends_with(".png") && !n.starts_with('.')))
                    .count()
            })
            .unwrap_or(0)
    }

    /// All jobs, oldest first.
    pub fn list(&self) -> Result<Vec<RenderJob>, StoreError> {
        let mut jobs = Vec::new();
        for entry in fs::read_dir(&self.root).map_err(io_err(&self.root))? {
            let entry = entry.map_err(io_err(&self.root))?;
            if let Some(id) = entry.file_name().to_str() {
                if self.exists(id) {
                    jobs.push(self.load(id)?);
                }
            }
        }
        jobs.sort_by(|a, b| (a.created_unix_ms, &a.id).cmp(&(b.created_unix_ms, &b.id)));
        Ok(jobs)
    }
}
