//! Job submission and execution.
//!
//! `run_job` is resumable: every stage first looks for its persisted output
//! and only recomputes what is missing, so re-running a job interrupted at
//! any point produces the same manifest as an uninterrupted run.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use cadence_core::audio::{analyze, read_wav, read_wav_duration, AnalysisBundle, AnalysisConfig, WindowFeatures};
use cadence_core::emotion::{
    events_from_samples, parse_va_track, AffineRegressor, EmotionEvent, VaRegressor, VaSample,
};
use cadence_core::interp::{build_frame_schedule, slerp, FrameSchedule, KeyframeSpec, ScheduleEntry};
use cadence_core::timeline::{
    build_prompt_request, compile_script, merge_events, parse_prompt_response, parse_transcript, style_tags_for,
    LoraSpec, MergeConfig, PromptScript, ScriptConfig, Transcript,
};
use futures::{StreamExt, TryStreamExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tokio::sync::broadcast;

use crate::archive::{ArchiveError, SessionArchive, CHARCHA_LORA_PREFIX};
use crate::clients::{ClientError, Clients, DecodeRequest, KeyframeRequest};
use crate::config::{ServiceConfig, DEFAULT_LORA_SCALE};
use crate::job::{
    Checksums, FrameManifest, JobProgress, JobRequest, JobStatus, ManifestFrame, RenderJob, TranscriptSource,
};
use crate::store::{unix_ms, valid_id, write_atomic, JobStore, StoreError};

pub const GENERATOR_UNAVAILABLE: &str = "generator unavailable";

#[derive(Debug, Error)]
pub enum SubmitError {
    #[error("{field}: {message}")]
    Invalid { field: &'static str, message: String },
    #[error(transparent)]
    Consent(ArchiveError),
    #[error("job {0} already exists")]
    Duplicate(String),
    #[error(transparent)]
    Store(StoreError),
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("job {0} not found")]
    NotFound(String),
    #[error("job failed: {0}")]
    Failed(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Placeholder valence/arousal model used when no trained weights are
/// configured: brighter spectra read as positive, louder and busier audio
/// as aroused. Feature order follows `FEATURE_NAMES`.
pub fn builtin_regressor() -> AffineRegressor {
    AffineRegressor::new(
        8,
        vec![
            // rms_mean, rms_std, centroid_mean, centroid_std, flux_mean, flux_std, zcr_mean, rolloff_mean
            0.0, 0.0, 4e-4, 0.0, 0.0, 0.0, 0.0, 1e-4, //
            4.0, 0.0, 0.0, 0.0, 8.0, 0.0, 1.0, 0.0,
        ],
        [-0.3, -0.4],
    )
    .expect("valid built-in weights")
}

/// Persisted as `analysis.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobAnalysis {
    pub bundle: AnalysisBundle,
    /// `"va_track"`, `"features_file"` or `"regressor"`.
    pub emotion_source: String,
    pub va: Vec<VaSample>,
    pub emotion_events: Vec<EmotionEvent>,
}

fn invalid(field: &'static str, message: impl Into<String>) -> SubmitError {
    SubmitError::Invalid {
        field,
        message: message.into(),
    }
}

fn load_transcript(src: &TranscriptSource) -> Result<Transcript, String> {
    let text = match src {
        TranscriptSource::Path(p) => std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?,
        TranscriptSource::Inline(v) => v.to_string(),
    };
    parse_transcript(&text).map_err(|e| e.to_string())
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

async fn with_retry<T, F, Fut>(attempts: u32, backoff: Duration, mut op: F) -> Result<T, ClientError>
where
    F: FnMut() -> Fut,
    Fut: std::future::Future<Output = Result<T, ClientError>>,
{
    let mut delay = backoff;
    let mut attempt = 1;
    loop {
        match op().await {
            Ok(v) => return Ok(v),
            Err(e) if attempt >= attempts => return Err(e),
            Err(e) => {
                tracing::warn!(attempt, error = %e, "retrying");
                tokio::time::sleep(delay).await;
                delay *= 2;
                attempt += 1;
            }
        }
    }
}

pub struct Orchestrator {
    config: Arc<ServiceConfig>,
    store: JobStore,
    archive: SessionArchive,
    clients: Clients,
    regressor: Arc<dyn VaRegressor>,
    events: broadcast::Sender<JobProgress>,
}

impl Orchestrator {
    pub fn new(
        config: Arc<ServiceConfig>,
        store: JobStore,
        archive: SessionArchive,
        clients: Clients,
    ) -> Result<Self, cadence_core::emotion::EmotionError> {
        let regressor: Arc<dyn VaRegressor> = match &config.render.emotion_weights {
            Some(p) => Arc::new(AffineRegressor::load(p)?),
            None => Arc::new(builtin_regressor()),
        };
        let (events, _) = broadcast::channel(1024);
        Ok(Self {
            config,
            store,
            archive,
            clients,
            regressor,
            events,
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn store(&self) -> &JobStore {
        &self.store
    }

    pub fn archive(&self) -> &SessionArchive {
        &self.archive
    }

    pub fn clients(&self) -> &Clients {
        &self.clients
    }

    /// Progress events for every job run by this orchestrator.
    pub fn subscribe(&self) -> broadcast::Receiver<JobProgress> {
        self.events.subscribe()
    }

    /// Validates and persists a job in `Pending`. Nothing is written when
    /// validation fails. `id` picks an explicit id; a fresh one is generated
    /// otherwise.
    pub fn submit_job(&self, req: JobRequest, id: Option<String>) -> Result<RenderJob, SubmitError> {
        let job = self.prepare_job(req, id)?;
        self.store.create(&job).map_err(|e| match e {
            StoreError::Exists(id) => SubmitError::Duplicate(id),
            e => SubmitError::Store(e),
        })?;
        tracing::info!(job = %job.id, "job submitted");
        Ok(job)
    }

    /// Runs every submission check, including the consent gate, without
    /// persisting anything.
    pub fn prepare_job(&self, req: JobRequest, id: Option<String>) -> Result<RenderJob, SubmitError> {
        let cfg = &self.config;
        if req.audio.as_os_str().is_empty() {
            return Err(invalid("audio", "is required"));
        }
        if !req.audio.is_file() {
            return Err(invalid("audio", format!("{} does not exist", req.audio.display())));
        }
        let duration = read_wav_duration(&req.audio).map_err(|e| invalid("audio", e.to_string()))?;
        let known = cfg.checkpoint_ids();
        let checkpoint_id = req.checkpoint.clone().unwrap_or_else(|| known[0].clone());
        if !known.contains(&checkpoint_id) {
            return Err(invalid(
                "checkpoint",
                format!("unknown checkpoint {checkpoint_id:?}; known: {}", known.join(", ")),
            ));
        }
        let fps = req.fps.unwrap_or(cfg.render.fps);
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(invalid("fps", "must be positive"));
        }
        if let Some(p) = &req.style_preset {
            if style_tags_for(p).is_none() {
                return Err(invalid("style_preset", format!("unknown preset {p:?}")));
            }
        }
        if let Some(t) = &req.transcript {
            load_transcript(t).map_err(|e| invalid("transcript", e))?;
        }
        for (field, p) in [("va_track", &req.va_track), ("features", &req.features)] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(invalid(field, format!("{} does not exist", p.display())));
                }
            }
        }

        let (lora, character_session) = self.resolve_lora(&req)?;

        let id = match id {
            Some(id) if !valid_id(&id) => return Err(invalid("id", "must be 1-64 characters of [A-Za-z0-9_-]")),
            Some(id) if self.store.exists(&id) => return Err(SubmitError::Duplicate(id)),
            Some(id) => id,
            None => uuid::Uuid::new_v4().simple().to_string(),
        };
        let master_seed = req
            .master_seed
            .unwrap_or_else(|| uuid::Uuid::new_v4().as_u64_pair().0);
        let audio_ref = std::path::absolute(&req.audio).unwrap_or_else(|_| req.audio.clone());
        let job = RenderJob {
            id,
            audio_ref,
            checkpoint_id,
            lora,
            character_session,
            fps,
            master_seed,
            status: JobStatus::Pending,
            expected_frames: (duration * fps + 0.5).floor() as usize,
            created_unix_ms: unix_ms(),
            request: req,
        };
        Ok(job)
    }

    /// Every way a request can name a character funnels through the
    /// consent gate here.
    fn resolve_lora(&self, req: &JobRequest) -> Result<(Option<LoraSpec>, Option<String>), SubmitError> {
        let from_lora = req
            .lora
            .as_ref()
            .and_then(|l| l.id.strip_prefix(CHARCHA_LORA_PREFIX).map(str::to_string));
        let session = match (&req.character_session, &from_lora) {
            (Some(a), Some(b)) if a != b => {
                return Err(invalid("lora", "names a different session than character_session"));
            }
            (Some(s), _) | (None, Some(s)) => Some(s.clone()),
            (None, None) => None,
        };
        let scale = req.lora.as_ref().and_then(|l| l.scale).unwrap_or(DEFAULT_LORA_SCALE);
        if !(scale > 0.0 && scale <= 1.0) {
            return Err(invalid("lora.scale", "must lie in (0, 1]"));
        }
        if let Some(sid) = session {
            self.archive.consent(&sid).map_err(SubmitError::Consent)?;
            return Ok((
                Some(LoraSpec {
                    id: format!("{CHARCHA_LORA_PREFIX}{sid}"),
                    scale,
                    character_token: Some(self.config.character_token.clone()),
                }),
                Some(sid),
            ));
        }
        match &req.lora {
            None => Ok((None, None)),
            Some(l) => {
                let entry = self.config.loras.iter().find(|e| e.id == l.id).ok_or_else(|| {
                    let known: Vec<&str> = self.config.loras.iter().map(|e| e.id.as_str()).collect();
                    invalid("lora", format!("unknown adapter {:?}; known: {}", l.id, known.join(", ")))
                })?;
                Ok((
                    Some(LoraSpec {
                        id: entry.id.clone(),
                        scale: l.scale.unwrap_or(entry.scale),
                        character_token: entry.character_token.clone(),
                    }),
                    None,
                ))
            }
        }
    }

    pub fn job(&self, id: &str) -> Result<RenderJob, RunError> {
        self.store.load(id).map_err(|e| match e {
            StoreError::NotFound(id) => RunError::NotFound(id),
            e => RunError::Store(e),
        })
    }

    /// Reflects persisted state only.
    pub fn job_status(&self, id: &str) -> Result<JobProgress, RunError> {
        let job = self.job(id)?;
        let total = self
            .store
            .read_artifact::<FrameSchedule>(id, "schedule.json")?
            .map(|s| s.len())
            .unwrap_or(job.expected_frames);
        let done = match job.status {
            JobStatus::Done => total,
            _ => self.store.frames_on_disk(id).min(total),
        };
        Ok(JobProgress {
            id: job.id,
            status: job.status,
            frames_done: done,
            frames_total: total,
        })
    }

    pub fn manifest(&self, id: &str) -> Result<Option<FrameManifest>, RunError> {
        self.job(id)?;
        Ok(self.store.read_artifact(id, "manifest.json")?)
    }

    fn advance(&self, job: &mut RenderJob, next: JobStatus) -> Result<(), StoreError> {
        if job.status.rank() < next.rank() {
            self.store.set_status(job, next)?;
            tracing::info!(job = %job.id, status = job.status.label(), "status");
            let total = job.expected_frames;
            let done = match job.status {
                JobStatus::Done => total,
                _ => self.store.frames_on_disk(&job.id).min(total),
            };
            self.publish(job, done, total);
        }
        Ok(())
    }

    fn publish(&self, job: &RenderJob, done: usize, total: usize) {
        let _ = self.events.send(JobProgress {
            id: job.id.clone(),
            status: job.status.clone(),
            frames_done: done,
            frames_total: total,
        });
    }

    fn fail(&self, job: &mut RenderJob, reason: String) -> RunError {
        tracing::error!(job = %job.id, %reason, "job failed");
        if let Err(e) = self.store.set_status(job, JobStatus::Failed { reason: reason.clone() }) {
            return RunError::Store(e);
        }
        self.publish(job, self.store.frames_on_disk(&job.id), job.expected_frames);
        RunError::Failed(reason)
    }

    /// Runs (or resumes) a job to completion.
    pub async fn run_job(&self, id: &str) -> Result<FrameManifest, RunError> {
        let mut job = self.job(id)?;
        match &job.status {
            JobStatus::Done => {
                return self
                    .store
                    .read_artifact(id, "manifest.json")?
                    .ok_or_else(|| RunError::Failed("manifest missing for a finished job".into()));
            }
            JobStatus::Failed { reason } => return Err(RunError::Failed(reason.clone())),
            _ => {}
        }

        let analysis = match self.store.read_artifact::<JobAnalysis>(id, "analysis.json")? {
            Some(a) => a,
            None => {
                self.advance(&mut job, JobStatus::Analyzing)?;
                match self.analyze(&job).await {
                    Ok(a) => {
                        self.store.write_artifact(id, "analysis.json", &a)?;
                        a
                    }
                    Err(reason) => return Err(self.fail(&mut job, reason)),
                }
            }
        };

        let script = match self.store.read_artifact::<PromptScript>(id, "script.json")? {
            Some(s) => s,
            None => {
                self.advance(&mut job, JobStatus::Compiling)?;
                match self.compile(&job, &analysis).await {
                    Ok(s) => {
                        self.store.write_artifact(id, "script.json", &s)?;
                        s
                    }
                    Err(reason) => return Err(self.fail(&mut job, reason)),
                }
            }
        };
        let schedule = match self.store.read_artifact::<FrameSchedule>(id, "schedule.json")? {
            Some(s) => s,
            None => {
                self.advance(&mut job, JobStatus::Compiling)?;
                match build_frame_schedule(&script, job.fps, &analysis.bundle.onset) {
                    Ok(s) => {
                        self.store.write_artifact(id, "schedule.json", &s)?;
                        s
                    }
                    Err(e) => return Err(self.fail(&mut job, e.to_string())),
                }
            }
        };

        self.advance(&mut job, JobStatus::Generating)?;
        let keyframes = match self.keyframes(&job, &script, &schedule).await {
            Ok(k) => k,
            Err(reason) => return Err(self.fail(&mut job, reason)),
        };
        let digests = match self.frames(&job, &schedule, &keyframes).await {
            Ok(d) => d,
            Err(reason) => return Err(self.fail(&mut job, reason)),
        };

        let manifest = assemble_manifest(&job, &script, &schedule, digests);
        self.store.write_artifact(id, "manifest.json", &manifest)?;
        if let Err(reason) = self.encode(&job, &manifest).await {
            return Err(self.fail(&mut job, reason));
        }
        self.advance(&mut job, JobStatus::Done)?;
        self.publish(&job, schedule.len(), schedule.len());
        Ok(manifest)
    }

    /// Runs `render.encode_command` once per job; an existing output is kept.
    async fn encode(&self, job: &RenderJob, manifest: &FrameManifest) -> Result<(), String> {
        let Some(template) = &self.config.render.encode_command else {
            return Ok(());
        };
        let out = self.store.path(&job.id, ENCODED_VIDEO);
        if out.exists() {
            return Ok(());
        }
        let argv = encode_command(template, manifest, &self.store.job_dir(&job.id), &out);
        let Some((program, args)) = argv.split_first() else {
            return Err("encode failed: empty encode_command".into());
        };
        let output = tokio::process::Command::new(program)
            .args(args)
            .stdin(std::process::Stdio::null())
            .output()
            .await
            .map_err(|e| format!("encode failed: {program}: {e}"))?;
        if !output.status.success() {
            let stderr = String::from_utf8_lossy(&output.stderr);
            return Err(format!("encode failed: {} {}", output.status, stderr.trim()));
        }
        if !out.exists() {
            return Err(format!("encode failed: {} was not written", out.display()));
        }
        Ok(())
    }

    /// The Analyzing stage, without persistence.
    pub async fn analyze(&self, job: &RenderJob) -> Result<JobAnalysis, String> {
        let audio_path = job.audio_ref.clone();
        let bundle = tokio::task::spawn_blocking(move || {
            let audio = read_wav(&audio_path).map_err(|e| format!("audio: {e}"))?;
            analyze(&audio, &AnalysisConfig::default()).map_err(|e| format!("analysis: {e}"))
        })
        .await
        .map_err(|e| format!("analysis task: {e}"))??;

        let decay = self.config.render.emotion_decay;
        let req = &job.request;
        let (source, va) = if let Some(p) = &req.va_track {
            let text = std::fs::read_to_string(p).map_err(|e| format!("va_track: {e}"))?;
            ("va_track", parse_va_track(&text).map_err(|e| format!("va_track: {e}"))?)
        } else {
            let (source, features) = match &req.features {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| format!("features: {e}"))?;
                    let f: Vec<WindowFeatures> =
                        serde_json::from_str(&text).map_err(|e| format!("features: {e}"))?;
                    ("features_file", f)
                }
                None => ("regressor", bundle.features.clone()),
            };
            let va = features
                .iter()
                .map(|f| {
                    let p = self.regressor.predict(f).map_err(|e| format!("emotion: {e}"))?;
                    Ok(VaSample {
                        window_start: f.window_start,
                        valence: p.valence,
                        arousal: p.arousal,
                    })
                })
                .collect::<Result<Vec<_>, String>>()?;
            (source, va)
        };
        let emotion_events = events_from_samples(&va, decay).map_err(|e| format!("emotion: {e}"))?;
        Ok(JobAnalysis {
            bundle,
            emotion_source: source.into(),
            va,
            emotion_events,
        })
    }

    /// The Compiling stage up to the script, without persistence.
    pub async fn compile(&self, job: &RenderJob, analysis: &JobAnalysis) -> Result<PromptScript, String> {
        let req = &job.request;
        let lyrics = match &req.transcript {
            Some(t) => load_transcript(t).map_err(|e| format!("transcript: {e}"))?.events,
            None => Vec::new(),
        };
        let b = &analysis.bundle;
        let segments = merge_events(&lyrics, &analysis.emotion_events, &b.beats, b.duration, &MergeConfig::default());
        let prompt_req = build_prompt_request(&segments, req.story_hint.as_deref());
        let (response, llm_error) = match self.clients.llm.complete(&prompt_req).await {
            Ok(text) => (Some(parse_prompt_response(&text)), None),
            Err(e) => {
                tracing::warn!(job = %job.id, error = %e, "llm failed; using template prompts");
                (None, Some(e.to_string()))
            }
        };
        let mut cfg = ScriptConfig::new(job.checkpoint_id.clone(), job.master_seed);
        if let Some(p) = &req.style_preset {
            cfg.style_preset = p.clone();
        }
        cfg.style_tags = req.style_tags.clone();
        cfg.negative_prompt = req.negative_prompt.clone().or_else(|| self.config.negative_prompt.clone());
        cfg.lora = job.lora.clone();
        let mut script = compile_script(&segments, response.as_ref(), &cfg, b.duration).map_err(|e| e.to_string())?;
        if let Some(e) = llm_error {
            script.warnings.push(format!("llm unavailable: {e}"));
            script.degraded = true;
        }
        Ok(script)
    }

    async fn keyframes(
        &self,
        job: &RenderJob,
        script: &PromptScript,
        schedule: &FrameSchedule,
    ) -> Result<Vec<Vec<f64>>, String> {
        // futures are built eagerly; closures inside stream combinators
        // would make the run_job future non-Send
        let tasks: Vec<_> = schedule
            .keyframes
            .iter()
            .map(|k| self.keyframe_one(job, script, k))
            .collect();
        futures::stream::iter(tasks)
            .buffered(self.config.render.workers)
            .try_collect()
            .await
    }

    async fn keyframe_one(&self, job: &RenderJob, script: &PromptScript, k: &KeyframeSpec) -> Result<Vec<f64>, String> {
        let g = &self.config.generator;
        let path = self.store.keyframe_path(&job.id, k.index);
        if let Some(v) = store_read_vector(&path)? {
            return Ok(v);
        }
        let seg = &script.segments[k.segment_index];
        let req = KeyframeRequest {
            prompt: seg.prompt.clone(),
            negative_prompt: seg.negative_prompt.clone(),
            seed: k.seed,
            checkpoint_id: job.checkpoint_id.clone(),
            lora: job.lora.clone(),
            steps: g.steps,
            guidance_scale: g.guidance_scale,
            width: g.width,
            height: g.height,
        };
        let gen = &self.clients.generator;
        let v = with_retry(g.retries, Duration::from_millis(g.backoff_ms), || gen.keyframe(&req))
            .await
            .map_err(|e| {
                tracing::error!(job = %job.id, keyframe = k.index, error = %e, "keyframe failed");
                GENERATOR_UNAVAILABLE.to_string()
            })?;
        let bytes = serde_json::to_vec(&v).map_err(|e| e.to_string())?;
        write_atomic(&path, &bytes).map_err(|e| e.to_string())?;
        Ok(v)
    }

    /// Returns per-frame SHA-256 digests in frame order.
    async fn frames(
        &self,
        job: &RenderJob,
        schedule: &FrameSchedule,
        keyframes: &[Vec<f64>],
    ) -> Result<Vec<String>, String> {
        let g = &self.config.generator;
        let ctx = FrameContext {
            job,
            keyframes,
            decode: DecodeRequest {
                checkpoint_id: job.checkpoint_id.clone(),
                lora: job.lora.clone(),
                width: g.width,
                height: g.height,
            },
            done: AtomicUsize::new(self.store.frames_on_disk(&job.id).min(schedule.len())),
            total: schedule.len(),
        };
        let tasks: Vec<_> = schedule.entries.iter().map(|e| self.frame_one(&ctx, e)).collect();
        futures::stream::iter(tasks)
            .buffered(self.config.render.workers)
            .try_collect()
            .await
    }

    async fn frame_one(&self, ctx: &FrameContext<'_>, e: &ScheduleEntry) -> Result<String, String> {
        let path = self.store.frame_path(&ctx.job.id, e.frame);
        if let Ok(bytes) = tokio::fs::read(&path).await {
            return Ok(sha256_hex(&bytes));
        }
        let g = &self.config.generator;
        let (a, b) = e.keyframe_pair;
        let v = slerp(&ctx.keyframes[a], &ctx.keyframes[b], e.weight).map_err(|err| err.to_string())?;
        let gen = &self.clients.generator;
        let png = with_retry(g.retries, Duration::from_millis(g.backoff_ms), || gen.decode(&v, &ctx.decode))
            .await
            .map_err(|err| {
                tracing::error!(job = %ctx.job.id, frame = e.frame, error = %err, "decode failed");
                GENERATOR_UNAVAILABLE.to_string()
            })?;
        let digest = sha256_hex(&png);
        tokio::task::spawn_blocking(move || write_atomic(&path, &png))
            .await
            .map_err(|err| err.to_string())?
            .map_err(|err| err.to_string())?;
        let n = ctx.done.fetch_add(1, Ordering::SeqCst) + 1;
        self.publish(ctx.job, n, ctx.total);
        Ok(digest)
    }
}

struct FrameContext<'a> {
    job: &'a RenderJob,
    keyframes: &'a [Vec<f64>],
    decode: DecodeRequest,
    done: AtomicUsize,
    total: usize,
}

fn store_read_vector(path: &Path) -> Result<Option<Vec<f64>>, String> {
    crate::store::read_json(path).map_err(|e| e.to_string())
}

/// Builds the manifest from the schedule and per-frame digests.
pub fn assemble_manifest(
    job: &RenderJob,
    script: &PromptScript,
    schedule: &FrameSchedule,
    digests: Vec<String>,
) -> FrameManifest {
    let mut all = Sha256::new();
    let frames: Vec<ManifestFrame> = schedule
        .entries
        .iter()
        .zip(digests)
        .map(|(e, sha256)| {
            all.update(sha256.as_bytes());
            ManifestFrame {
                index: e.frame,
                time: e.time,
                image: JobStore::frame_name(e.frame),
                segment_index: e.segment_index,
                keyframe_pair: e.keyframe_pair,
                weight: e.weight,
                sha256,
            }
        })
        .collect();
    FrameManifest {
        job_id: job.id.clone(),
        audio_ref: job.audio_ref.clone(),
        fps: schedule.fps,
        duration: script.duration,
        degraded: script.degraded,
        frames,
        checksums: Checksums {
            algorithm: "sha256".into(),
            digest: hex::encode(all.finalize()),
        },
    }
}

/// File name of the encoded video inside the job directory.
pub const ENCODED_VIDEO: &str = "video.mp4";

/// Substitutes `{fps}`, `{frames}`, `{audio}` and `{out}` into the
/// configured encoder command line.
pub fn encode_command(template: &str, manifest: &FrameManifest, job_dir: &Path, out: &Path) -> Vec<String> {
    let frames: PathBuf = job_dir.join("frames");
    template
        .split_whitespace()
        .map(|tok| {
            tok.replace("{fps}", &manifest.fps.to_string())
                .replace("{frames}", &frames.display().to_string())
                .replace("{audio}", &manifest.audio_ref.display().to_string())
                .replace("{out}", &out.display().to_string())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use cadence_core::audio::window_features;
    use cadence_core::synth;
    use cadence_core::emotion::emotion_track;

    #[test]
    fn builtin_regressor_separates_bright_noise_from_a_low_tone() {
        let noise = synth::white_noise(10.0, 0.3, 1, 22050);
        let tone = synth::sine(110.0, 10.0, 0.05, 22050);
        let r = builtin_regressor();
        let fv = |a| window_features(a, 5.0).unwrap();
        let n = r.predict(&fv(&noise)[0]).unwrap();
        let t = r.predict(&fv(&tone)[0]).unwrap();
        assert!(n.valence > t.valence && n.arousal > t.arousal);
        assert!(!emotion_track(&r, &fv(&noise)).unwrap().is_empty());
    }

    #[tokio::test]
    async fn retry_is_bounded_with_doubling_backoff() {
        let calls = AtomicUsize::new(0);
        let start = tokio::time::Instant::now();
        let r: Result<(), _> = with_retry(3, Duration::from_millis(10), || async {
            calls.fetch_add(1, Ordering::SeqCst);
            Err(ClientError::Unreachable {
                service: "generator",
                message: "down".into(),
            })
        })
        .await;
        assert!(r.is_err());
        assert_eq!(calls.load(Ordering::SeqCst), 3);
        assert!(start.elapsed() >= Duration::from_millis(30));
    }

    #[test]
    fn encoder_template() {
        let m = FrameManifest {
            job_id: "j".into(),
            audio_ref: "/a/song.wav".into(),
            fps: 12.0,
            duration: 1.0,
            degraded: false,
            frames: Vec::new(),
            checksums: Checksums {
                algorithm: "sha256".into(),
                digest: String::new(),
            },
        };
        let argv = encode_command(
            "ffmpeg -framerate {fps} -i {frames}/%06d.png -i {audio} {out}",
            &m,
            Path::new("/jobs/j"),
            Path::new("out.mp4"),
        );
        assert_eq!(argv[2], "12");
        assert_eq!(argv[4], "/jobs/j/frames/%06d.png");
        assert_eq!(argv[6], "/a/song.wav");
    }
}
