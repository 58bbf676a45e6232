//! Persisted CHARCHA outcomes and the consent gate.
//!
//! ```text
//! sessions/<id>/session.json      SessionRecord
//! sessions/<id>/pending/<tag>.png uploads awaiting a verdict
//! sessions/<id>/verdict.json      SessionOutcome
//! sessions/<id>/snapshots/<tag>.png  kept only for passed sessions
//! ```
//!
//! Uploads are held in `pending/` until the verdict. A pass promotes the
//! passing attempt's tags to `snapshots/`; anything else is deleted.

use std::fs;
use std::path::{Path, PathBuf};

use cadence_core::charcha::{AttemptRecord, Snapshot, Verdict};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::{read_json, valid_id, write_atomic, write_json_atomic, StoreError};

pub const CONSENT_REQUIRED: &str = "charcha verification required";

/// Prefix marking a LoRA id that refers to a verified session.
pub const CHARCHA_LORA_PREFIX: &str = "charcha:";

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("session {0} not found")]
    NotFound(String),
    #[error("{CONSENT_REQUIRED}: session {session} {detail}")]
    Consent { session: String, detail: String },
    #[error("session {session}: {detail}")]
    Rejected { session: String, detail: String },
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub id: String,
    pub seed: u64,
    pub created_unix_ms: u64,
    pub expires_unix_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionOutcome {
    pub verdict: Verdict,
    pub attempts: Vec<AttemptRecord>,
    /// Snapshot events of the passing attempt; empty otherwise.
    pub snapshots: Vec<Snapshot>,
}

/// Proof that a session passed, with the stored reference images.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsentGrant {
    pub session: String,
    pub snapshots: Vec<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct SessionArchive {
    root: PathBuf,
}

impl SessionArchive {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|source| StoreError::Io {
            path: root.clone(),
            source,
        })?;
        Ok(Self { root })
    }

    fn dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    pub fn register(&self, record: &SessionRecord) -> Result<(), ArchiveError> {
        if !valid_id(&record.id) {
            return Err(ArchiveError::NotFound(record.id.clone()));
        }
        write_json_atomic(&self.dir(&record.id).join("session.json"), record)?;
        Ok(())
    }

    pub fn record(&self, id: &str) -> Result<SessionRecord, ArchiveError> {
        if !valid_id(id) {
            return Err(ArchiveError::NotFound(id.into()));
        }
        read_json(&self.dir(id).join("session.json"))?.ok_or_else(|| ArchiveError::NotFound(id.into()))
    }

    pub fn outcome(&self, id: &str) -> Result<Option<SessionOutcome>, ArchiveError> {
        self.record(id)?;
        Ok(read_json(&self.dir(id).join("verdict.json"))?)
    }

    fn check_tag(id: &str, tag: &str) -> Result<(), ArchiveError> {
        if valid_id(tag) {
            Ok(())
        } else {
            Err(ArchiveError::Rejected {
                session: id.into(),
                detail: format!("invalid snapshot tag {tag:?}"),
            })
        }
    }

    /// Stores an uploaded snapshot. Before the verdict it is held as
    /// pending; after a pass it is kept only if the passing attempt captured
    /// that tag; after a failure it is refused.
    pub fn upload_snapshot(&self, id: &str, tag: &str, png: &[u8]) -> Result<PathBuf, ArchiveError> {
        self.record(id)?;
        Self::check_tag(id, tag)?;
        let dir = self.dir(id);
        match self.outcome(id)? {
            None => {
                let p = dir.join("pending").join(format!("{tag}.png"));
                write_atomic(&p, png)?;
                Ok(p)
            }
            Some(o) if o.verdict.passed && o.snapshots.iter().any(|s| s.tag == tag) => {
                let p = dir.join("snapshots").join(format!("{tag}.png"));
                write_atomic(&p, png)?;
                Ok(p)
            }
            Some(o) => Err(ArchiveError::Rejected {
                session: id.into(),
                detail: if o.verdict.passed {
                    format!("tag {tag:?} was not captured by the passing attempt")
                } else {
                    "failed sessions keep no images".into()
                },
            }),
        }
    }

    /// Persists the outcome, then promotes or deletes pending uploads.
    pub fn record_outcome(&self, id: &str, outcome: &SessionOutcome) -> Result<(), ArchiveError> {
        self.record(id)?;
        let dir = self.dir(id);
        write_json_atomic(&dir.join("verdict.json"), outcome)?;
        let pending = dir.join("pending");
        if outcome.verdict.passed {
            for s in &outcome.snapshots {
                let from = pending.join(format!("{}.png", s.tag));
                if from.is_file() {
                    let to = dir.join("snapshots").join(format!("{}.png", s.tag));
                    fs::create_dir_all(to.parent().expect("has parent")).map_err(|source| StoreError::Io {
                        path: to.clone(),
                        source,
                    })?;
                    fs::rename(&from, &to).map_err(|source| StoreError::Io { path: to, source })?;
                }
            }
        }
        if pending.exists() {
            fs::remove_dir_all(&pending).map_err(|source| StoreError::Io { path: pending, source })?;
        }
        Ok(())
    }

    /// Stored snapshot paths, sorted by tag.
    pub fn snapshots(&self, id: &str) -> Result<Vec<PathBuf>, ArchiveError> {
        self.record(id)?;
        Ok(list_png(&self.dir(id).join("snapshots")))
    }

    pub fn snapshot_path(&self, id: &str, tag: &str) -> Option<PathBuf> {
        if !valid_id(id) || !valid_id(tag) {
            return None;
        }
        let p = self.dir(id).join("snapshots").join(format!("{tag}.png"));
        p.is_file().then_some(p)
    }

    pub fn pending_tags(&self, id: &str) -> Vec<String> {
        list_png(&self.dir(id).join("pending"))
            .iter()
            .filter_map(|p| p.file_stem().and_then(|s| s.to_str()).map(str::to_string))
            .collect()
    }

    /// The gate every personalization path goes through.
    pub fn consent(&self, id: &str) -> Result<ConsentGrant, ArchiveError> {
        let deny = |detail: &str| ArchiveError::Consent {
            session: id.into(),
            detail: detail.into(),
        };
        match self.outcome(id) {
            Err(ArchiveError::NotFound(_)) => Err(deny("does not exist")),
            Err(e) => Err(e),
            Ok(None) => Err(deny("has no verdict yet")),
            Ok(Some(o)) if !o.verdict.passed => Err(deny("did not pass")),
            Ok(Some(_)) => Ok(ConsentGrant {
                session: id.into(),
                snapshots: self.snapshots(id)?,
            }),
        }
    }
}

fn list_png(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map(|rd| {
            rd.filter_map(Result::ok)
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|x| x == "png"))
                .collect()
        })
        .unwrap_or_default();
    v.sort();
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(passed: bool, tags: &[&str]) -> SessionOutcome {
        SessionOutcome {
            verdict: Verdict {
                passed,
                reason: (!passed).then(|| "challenge failed".into()),
                attempt: 1,
                scores: Vec::new(),
                spoof_flags: Vec::new(),
                t_ms: 0,
            },
            attempts: Vec::new(),
            snapshots: tags
                .iter()
                .map(|t| Snapshot {
                    attempt: 1,
                    tag: t.to_string(),
                    t_ms: 0,
                })
                .collect(),
        }
    }

    fn archive() -> (tempfile::TempDir, SessionArchive) {
        let dir = tempfile::tempdir().unwrap();
        let a = SessionArchive::open(dir.path()).unwrap();
        a.register(&SessionRecord {
            id: "s1".into(),
            seed: 1,
            created_unix_ms: 0,
            expires_unix_ms: u64::MAX,
        })
        .unwrap();
        (dir, a)
    }

    #[test]
    fn pass_promotes_only_passing_tags() {
        let (_d, a) = archive();
        assert!(matches!(a.consent("s1"), Err(ArchiveError::Consent { .. })));
        a.upload_snapshot("s1", "neutral", b"n").unwrap();
        a.upload_snapshot("s1", "wink", b"w").unwrap();
        a.record_outcome("s1", &outcome(true, &["neutral", "smile"])).unwrap();
        assert!(a.pending_tags("s1").is_empty());
        // late upload of a passing tag is accepted, others are refused
        a.upload_snapshot("s1", "smile", b"s").unwrap();
        assert!(a.upload_snapshot("s1", "wink", b"w").is_err());
        let grant = a.consent("s1").unwrap();
        let names: Vec<_> = grant.snapshots.iter().map(|p| p.file_name().unwrap().to_owned()).collect();
        assert_eq!(names, ["neutral.png", "smile.png"]);
    }

    #[test]
    fn failure_deletes_uploads_and_denies_consent() {
        let (_d, a) = archive();
        a.upload_snapshot("s1", "neutral", b"n").unwrap();
        a.record_outcome("s1", &outcome(false, &[])).unwrap();
        assert!(a.pending_tags("s1").is_empty());
        assert!(a.snapshots("s1").unwrap().is_empty());
        assert!(a.upload_snapshot("s1", "neutral", b"n").is_err());
        let err = a.consent("s1").unwrap_err().to_string();
        assert!(err.starts_with(CONSENT_REQUIRED), "{err}");
        assert!(matches!(a.consent("nope"), Err(ArchiveError::Consent { .. })));
        assert!(a.upload_snapshot("s1", "../x", b"").is_err());
    }
}
