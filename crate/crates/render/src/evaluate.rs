//! Evaluation of a finished job against a set of reference images.
//!
//! Per-frame face checks are cached in `eval/verification.json`, keyed by
//! a digest of the reference set, so re-aggregation needs no client calls.

use std::path::{Path, PathBuf};

use cadence_core::eval::{
    face_frame_metrics, replication_flag, summarize_tracks, FrameVerification, SimilarityTrack, TrackSummary,
    VerificationReport,
};
use futures::{StreamExt, TryStreamExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clients::Clients;
use crate::job::FrameManifest;
use crate::store::{read_json, write_json_atomic, JobStore, StoreError};

#[derive(Debug, Error)]
pub enum EvalRunError {
    #[error("job {0} has no manifest; render it first")]
    NotRendered(String),
    #[error("no reference images in {0}")]
    NoReferences(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("face verification: {0}")]
    Verify(String),
    #[error(transparent)]
    Eval(#[from] cadence_core::eval::EvalError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct VerificationCache {
    references_digest: String,
    frames: Vec<FrameVerification>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub job_id: String,
    pub participant: String,
    pub references: Vec<String>,
    pub verification: VerificationReport,
    pub similarity: SimilarityTrack,
    pub possible_replication: bool,
    /// `(t, similarity)` pairs without gaps, ready for plotting.
    pub plot: Vec<(f64, f64)>,
}

/// PNG files in `dir`, sorted by name, or `dir` itself when it is a file.
pub fn reference_images(dir: &Path) -> Result<Vec<PathBuf>, EvalRunError> {
    if dir.is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let rd = std::fs::read_dir(dir).map_err(|source| EvalRunError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut v: Vec<PathBuf> = rd
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    v.sort();
    if v.is_empty() {
        return Err(EvalRunError::NoReferences(dir.to_path_buf()));
    }
    Ok(v)
}

/// Frame index sampled for second `s`: the frame nearest to `t = s`.
pub fn frame_for_second(manifest: &FrameManifest, s: usize) -> Option<usize> {
    let n = manifest.frames.len();
    if n == 0 {
        return None;
    }
    let i = (s as f64 * manifest.fps + 0.5).floor() as usize;
    (i < n).then_some(i)
}

fn read(path: &Path) -> Result<Vec<u8>, EvalRunError> {
    std::fs::read(path).map_err(|source| EvalRunError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub struct Evaluator<'a> {
    pub store: &'a JobStore,
    pub clients: &'a Clients,
    pub workers: usize,
}

impl Evaluator<'_> {
    async fn verify_one(&self, path: PathBuf, index: usize, refs: &[Vec<u8>]) -> Result<FrameVerification, EvalRunError> {
        let bytes = read(&path)?;
        let c = self
            .clients
            .face_verify
            .verify(&bytes, refs)
            .await
            .map_err(|e| EvalRunError::Verify(e.to_string()))?;
        Ok(FrameVerification {
            frame_index: index,
            face_present: c.face_present,
            verified: c.verified && c.face_present,
        })
    }

    pub async fn evaluate(
        &self,
        job_id: &str,
        references: &[PathBuf],
        participant: &str,
    ) -> Result<EvalReport, EvalRunError> {
        let manifest: FrameManifest = self
            .store
            .read_artifact(job_id, "manifest.json")?
            .ok_or_else(|| EvalRunError::NotRendered(job_id.into()))?;
        if references.is_empty() {
            return Err(EvalRunError::NoReferences(PathBuf::new()));
        }
        let refs: Vec<Vec<u8>> = references.iter().map(|p| read(p)).collect::<Result<_, _>>()?;
        let mut h = Sha256::new();
        for r in &refs {
            h.update(Sha256::digest(r));
        }
        let refs_digest = hex::encode(h.finalize());
        let job_dir = self.store.job_dir(job_id);

        let cache_path = job_dir.join("eval/verification.json");
        let cached: Option<VerificationCache> = read_json(&cache_path)?;
        let frames = match cached {
            Some(c) if c.references_digest == refs_digest && c.frames.len() == manifest.frames.len() => c.frames,
            _ => {
                let tasks: Vec<_> = manifest
                    .frames
                    .iter()
                    .map(|f| self.verify_one(job_dir.join(&f.image), f.index, &refs))
                    .collect();
                let frames: Vec<FrameVerification> = futures::stream::iter(tasks)
                    .buffered(self.workers.max(1))
                    .try_collect()
                    .await?;
                write_json_atomic(
                    &cache_path,
                    &VerificationCache {
                        references_digest: refs_digest,
                        frames: frames.clone(),
                    },
                )?;
                frames
            }
        };
        let verification = face_frame_metrics(&frames)?;

        let mut ref_embeddings = Vec::with_capacity(refs.len());
        for r in &refs {
            ref_embeddings.push(
                self.clients
                    .embedding
                    .embed_image(r)
                    .await
                    .map_err(|e| EvalRunError::Verify(format!("reference embedding: {e}")))?,
            );
        }
        let seconds = manifest.duration.floor() as usize;
        let mut per_second = Vec::with_capacity(seconds);
        for s in 0..seconds {
            let emb = match frame_for_second(&manifest, s) {
                Some(i) => match std::fs::read(job_dir.join(&manifest.frames[i].image)) {
                    Ok(bytes) => self.clients.embedding.embed_image(&bytes).await.ok(),
                    Err(_) => None,
                },
                None => None,
            };
            per_second.push((s as f64, emb));
        }
        let similarity = SimilarityTrack::from_embeddings(participant, &per_second, &ref_embeddings)?;
        let report = EvalReport {
            job_id: job_id.into(),
            participant: participant.into(),
            references: references.iter().map(|p| p.display().to_string()).collect(),
            verification,
            possible_replication: replication_flag(&similarity),
            plot: similarity
                .points
                .iter()
                .filter_map(|p| p.character_similarity.map(|v| (p.t, v)))
                .collect(),
            similarity,
        };
        write_json_atomic(&job_dir.join("eval/report.json"), &report)?;
        Ok(report)
    }
}

/// Cross-participant summary over several reports.
pub fn summarize_reports(reports: &[EvalReport]) -> TrackSummary {
    let tracks: Vec<SimilarityTrack> = reports.iter().map(|r| r.similarity.clone()).collect();
    summarize_tracks(&tracks)
}
