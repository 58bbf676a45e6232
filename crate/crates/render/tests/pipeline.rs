use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use cadence_core::audio::write_wav;
use cadence_core::charcha::{Snapshot, Verdict};
use cadence_core::synth;
use cadence_render::archive::{SessionOutcome, SessionRecord};
use cadence_render::clients::mock::{MockGenerator, UnavailableLlm, UnreachableGenerator};
use cadence_render::clients::{
    Capabilities, ClientError, DecodeRequest, FaceCheck, FaceVerifyClient, GeneratorClient, KeyframeRequest,
};
use cadence_render::config::VectorSpace;
use cadence_render::evaluate::Evaluator;
use cadence_render::orchestrator::ENCODED_VIDEO;
use cadence_render::job::{JobRequest, LoraRequest, TranscriptSource};
use cadence_render::{Clients, JobStatus, JobStore, Orchestrator, RunError, ServiceConfig, SessionArchive, SubmitError};
use tempfile::TempDir;

struct Env {
    dir: TempDir,
    audio: PathBuf,
    transcript: PathBuf,
}

fn env(seconds: f64) -> Env {
    let dir = tempfile::tempdir().unwrap();
    let audio = dir.path().join("song.wav");
    write_wav(&audio, &synth::demo_song(seconds, 22050)).unwrap();
    let transcript = dir.path().join("transcript.json");
    std::fs::write(
        &transcript,
        r#"{"segments":[{"start":0.0,"end":14.8,"text":"walking through the morning light"},
                        {"start":15.0,"end":29.5,"text":"the city folds into the sea"}]}"#,
    )
    .unwrap();
    Env { dir, audio, transcript }
}

fn orchestrator(root: &Path, config: ServiceConfig, clients: Option<Clients>) -> Orchestrator {
    let clients = clients.unwrap_or_else(|| Clients::mock(&config));
    Orchestrator::new(
        Arc::new(config),
        JobStore::open(root.join("jobs")).unwrap(),
        SessionArchive::open(root.join("sessions")).unwrap(),
        clients,
    )
    .unwrap()
}

fn fast_config() -> ServiceConfig {
    let mut c = ServiceConfig::default();
    c.generator.backoff_ms = 1;
    c
}

fn request(e: &Env) -> JobRequest {
    JobRequest {
        audio: e.audio.clone(),
        transcript: Some(TranscriptSource::Path(e.transcript.clone())),
        master_seed: Some(42),
        ..Default::default()
    }
}

#[tokio::test]
async fn mock_run_produces_a_frame_per_schedule_entry() {
    let e = env(30.0);
    let o = orchestrator(e.dir.path(), fast_config(), None);
    let job = o.submit_job(request(&e), None).unwrap();
    assert_eq!(job.status, JobStatus::Pending);
    let p = o.job_status(&job.id).unwrap();
    assert_eq!((p.frames_done, p.frames_total), (0, 360));

    let m = o.run_job(&job.id).await.unwrap();
    assert_eq!(m.frames.len(), 360);
    assert!(m.frames.iter().enumerate().all(|(i, f)| f.index == i));
    assert!(!m.degraded);
    let p = o.job_status(&job.id).unwrap();
    assert_eq!((p.status, p.frames_done, p.frames_total), (JobStatus::Done, 360, 360));
    assert_eq!(o.store().frames_on_disk(&job.id), 360);

    let statuses: Vec<String> = o
        .store()
        .journal(&job.id)
        .unwrap()
        .iter()
        .map(|r| r.status.label().to_string())
        .collect();
    assert_eq!(statuses, ["pending", "analyzing", "compiling", "generating", "done"]);

    let script: cadence_core::timeline::PromptScript = o.store().read_artifact(&job.id, "script.json").unwrap().unwrap();
    assert!(script.segments.len() >= 2);
    assert!(script.segments.iter().all(|s| s.negative_prompt.contains("nsfw")));

    // a finished job is returned as is
    assert_eq!(o.run_job(&job.id).await.unwrap(), m);
}

#[tokio::test]
async fn same_seed_gives_byte_identical_manifests() {
    let e = env(12.0);
    let a = orchestrator(&e.dir.path().join("a"), fast_config(), None);
    let b = orchestrator(&e.dir.path().join("b"), fast_config(), None);
    for o in [&a, &b] {
        o.submit_job(request(&e), Some("fixed".into())).unwrap();
        o.run_job("fixed").await.unwrap();
    }
    let read = |o: &Orchestrator, name: &str| std::fs::read(o.store().path("fixed", name)).unwrap();
    assert_eq!(read(&a, "manifest.json"), read(&b, "manifest.json"));
    assert_eq!(read(&a, "keyframes/0000.json"), read(&b, "keyframes/0000.json"));

    // the id differs but the frames do not
    let other = a.submit_job(request(&e), None).unwrap();
    let m = a.run_job(&other.id).await.unwrap();
    assert_eq!(m.checksums, a.manifest("fixed").unwrap().unwrap().checksums);

    let mut r = request(&e);
    r.master_seed = Some(43);
    let third = a.submit_job(r, None).unwrap();
    assert_ne!(a.run_job(&third.id).await.unwrap().checksums, m.checksums);
}

#[tokio::test]
async fn interrupted_run_resumes_to_the_same_manifest() {
    let e = env(12.0);
    let reference = orchestrator(&e.dir.path().join("ref"), fast_config(), None);
    reference.submit_job(request(&e), Some("job".into())).unwrap();
    let expected = reference.run_job("job").await.unwrap();

    let mut slow = fast_config();
    slow.generator.mock_frame_delay_ms = 5;
    slow.render.workers = 2;
    let root = e.dir.path().join("crash");
    let o = Arc::new(orchestrator(&root, slow, None));
    o.submit_job(request(&e), Some("job".into())).unwrap();
    let runner = {
        let o = o.clone();
        tokio::spawn(async move { o.run_job("job").await })
    };
    while o.store().frames_on_disk("job") < 40 {
        tokio::time::sleep(std::time::Duration::from_millis(5)).await;
    }
    runner.abort();
    let _ = runner.await;
    let p = o.job_status("job").unwrap();
    assert_eq!(p.status, JobStatus::Generating);
    assert!(p.frames_done >= 40 && p.frames_done < p.frames_total);

    let fresh = orchestrator(&root, fast_config(), None);
    let resumed = fresh.run_job("job").await.unwrap();
    assert_eq!(resumed, expected);
    assert_eq!(
        std::fs::read(fresh.store().path("job", "manifest.json")).unwrap(),
        std::fs::read(reference.store().path("job", "manifest.json")).unwrap()
    );
}

#[tokio::test]
async fn unreachable_generator_fails_after_three_attempts() {
    let e = env(6.0);
    let mut config = fast_config();
    config.render.workers = 1;
    let gen = Arc::new(UnreachableGenerator::default());
    let mut clients = Clients::mock(&config);
    clients.generator = gen.clone();
    clients.llm = Arc::new(UnavailableLlm);
    let o = orchestrator(e.dir.path(), config, Some(clients));
    let job = o.submit_job(request(&e), None).unwrap();
    let err = o.run_job(&job.id).await.unwrap_err();
    assert!(matches!(err, RunError::Failed(ref r) if r == "generator unavailable"), "{err}");
    assert_eq!(gen.calls(), 3);
    assert_eq!(
        o.job_status(&job.id).unwrap().status,
        JobStatus::Failed {
            reason: "generator unavailable".into()
        }
    );
    // the degraded script was still persisted before generation
    let script: cadence_core::timeline::PromptScript = o.store().read_artifact(&job.id, "script.json").unwrap().unwrap();
    assert!(script.degraded);
    assert!(matches!(o.run_job(&job.id).await, Err(RunError::Failed(_))));
}

/// Mock generator that logs call order and stops decoding after a budget.
struct Recording {
    inner: MockGenerator,
    log: Mutex<Vec<&'static str>>,
    decode_budget: AtomicUsize,
}

#[async_trait]
impl GeneratorClient for Recording {
    fn capabilities(&self) -> Capabilities {
        self.inner.capabilities()
    }

    async fn keyframe(&self, req: &KeyframeRequest) -> Result<Vec<f64>, ClientError> {
        self.log.lock().unwrap().push("keyframe");
        self.inner.keyframe(req).await
    }

    async fn decode(&self, v: &[f64], req: &DecodeRequest) -> Result<Vec<u8>, ClientError> {
        self.log.lock().unwrap().push("decode");
        if self
            .decode_budget
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |b| b.checked_sub(1))
            .is_err()
        {
            return Err(ClientError::Unreachable {
                service: "generator",
                message: "gone".into(),
            });
        }
        self.inner.decode(v, req).await
    }
}

#[tokio::test]
async fn keyframes_precede_decodes_and_partial_frames_survive_failure() {
    let e = env(8.0);
    let mut config = fast_config();
    config.render.workers = 1;
    let rec = Arc::new(Recording {
        inner: MockGenerator::new(VectorSpace::Latent, 256, 0),
        log: Mutex::new(Vec::new()),
        decode_budget: AtomicUsize::new(30),
    });
    let mut clients = Clients::mock(&config);
    clients.generator = rec.clone();
    let o = orchestrator(e.dir.path(), config, Some(clients));
    let job = o.submit_job(request(&e), None).unwrap();
    assert!(o.run_job(&job.id).await.is_err());
    let log = rec.log.lock().unwrap().clone();
    let first_decode = log.iter().position(|c| *c == "decode").unwrap();
    assert!(log[first_decode..].iter().all(|c| *c == "decode"));
    assert_eq!(o.store().frames_on_disk(&job.id), 30);
}

#[tokio::test]
async fn submission_validation() {
    let e = env(2.0);
    let o = orchestrator(e.dir.path(), fast_config(), None);

    let mut r = request(&e);
    r.audio = e.dir.path().join("missing.wav");
    assert!(matches!(o.submit_job(r, None), Err(SubmitError::Invalid { field: "audio", .. })));
    assert!(o.store().list().unwrap().is_empty());

    let mut r = request(&e);
    r.checkpoint = Some("sdxl".into());
    let msg = o.submit_job(r, None).unwrap_err().to_string();
    assert!(msg.contains("sd15-base") && msg.contains("sd15-animation"), "{msg}");

    let mut r = request(&e);
    r.lora = Some(LoraRequest {
        id: "unknown".into(),
        scale: None,
    });
    assert!(o.submit_job(r, None).is_err());

    let a = o.submit_job(request(&e), None).unwrap();
    let b = o.submit_job(request(&e), None).unwrap();
    assert_ne!(a.id, b.id);
    assert!(matches!(o.submit_job(request(&e), Some(a.id.clone())), Err(SubmitError::Duplicate(_))));
    assert!(matches!(o.job_status("nope"), Err(RunError::NotFound(_))));
}

fn record_session(o: &Orchestrator, id: &str, passed: bool) {
    let a = o.archive();
    a.register(&SessionRecord {
        id: id.into(),
        seed: 1,
        created_unix_ms: 0,
        expires_unix_ms: u64::MAX,
    })
    .unwrap();
    a.upload_snapshot(id, "neutral", b"png").unwrap();
    a.record_outcome(
        id,
        &SessionOutcome {
            verdict: Verdict {
                passed,
                reason: (!passed).then(|| "challenge failed".into()),
                attempt: 1,
                scores: Vec::new(),
                spoof_flags: Vec::new(),
                t_ms: 0,
            },
            attempts: Vec::new(),
            snapshots: vec![Snapshot {
                attempt: 1,
                tag: "neutral".into(),
                t_ms: 0,
            }],
        },
    )
    .unwrap();
}

#[tokio::test]
async fn consent_gate_on_every_character_reference() {
    let e = env(2.0);
    let o = orchestrator(e.dir.path(), fast_config(), None);
    record_session(&o, "failed", false);
    record_session(&o, "passed", true);
    let variants = |sid: &str| {
        let mut by_lora = request(&e);
        by_lora.lora = Some(LoraRequest {
            id: format!("charcha:{sid}"),
            scale: None,
        });
        let mut by_session = request(&e);
        by_session.character_session = Some(sid.into());
        let mut both = by_lora.clone();
        both.character_session = Some(sid.into());
        [by_lora, by_session, both]
    };
    for sid in ["failed", "unknown-session"] {
        for r in variants(sid) {
            let err = o.submit_job(r, None).unwrap_err();
            assert!(matches!(err, SubmitError::Consent(_)), "{err}");
            assert!(err.to_string().starts_with("charcha verification required"));
        }
    }
    for r in variants("passed") {
        let job = o.submit_job(r, None).unwrap();
        let lora = job.lora.unwrap();
        assert_eq!((lora.id.as_str(), lora.scale), ("charcha:passed", 0.8));
        assert_eq!(job.character_session.as_deref(), Some("passed"));
    }
}

struct CountingVerify(AtomicUsize);

#[async_trait]
impl FaceVerifyClient for CountingVerify {
    async fn verify(&self, _: &[u8], _: &[Vec<u8>]) -> Result<FaceCheck, ClientError> {
        let n = self.0.fetch_add(1, Ordering::SeqCst);
        Ok(FaceCheck {
            face_present: !n.is_multiple_of(10),
            verified: !n.is_multiple_of(5),
        })
    }
}

#[tokio::test]
async fn evaluation_is_cached_and_per_second() {
    let e = env(6.0);
    let config = fast_config();
    let verify = Arc::new(CountingVerify(AtomicUsize::new(0)));
    let mut clients = Clients::mock(&config);
    clients.face_verify = verify.clone();
    let o = orchestrator(e.dir.path(), config, Some(clients.clone()));
    let job = o.submit_job(request(&e), None).unwrap();
    let m = o.run_job(&job.id).await.unwrap();

    let refs = vec![o.store().job_dir(&job.id).join(&m.frames[0].image)];
    let ev = Evaluator {
        store: o.store(),
        clients: &clients,
        workers: 4,
    };
    let r1 = ev.evaluate(&job.id, &refs, "p1").await.unwrap();
    assert_eq!(verify.0.load(Ordering::SeqCst), 72);
    assert_eq!(r1.similarity.points.len(), 6);
    assert_eq!(r1.verification.total_frames, 72);
    let first = r1.similarity.points[0].character_similarity.unwrap();
    assert!((first - 1.0).abs() < 1e-12, "frame 0 is the reference: {first}");

    let r2 = ev.evaluate(&job.id, &refs, "p1").await.unwrap();
    assert_eq!(verify.0.load(Ordering::SeqCst), 72, "cached");
    assert_eq!(r1, r2);
}

#[tokio::test]
async fn encode_command_runs_after_the_last_frame() {
    let e = env(6.0);
    let mut c = fast_config();
    c.render.encode_command = Some("cp {frames}/000000.png {out}".into());
    let o = orchestrator(&e.dir.path().join("ok"), c, None);
    o.submit_job(request(&e), Some("enc".into())).unwrap();
    o.run_job("enc").await.unwrap();
    let video = std::fs::read(o.store().path("enc", ENCODED_VIDEO)).unwrap();
    assert_eq!(video, std::fs::read(o.store().frame_path("enc", 0)).unwrap());

    let mut c = fast_config();
    c.render.encode_command = Some("false {out}".into());
    let o = orchestrator(&e.dir.path().join("bad"), c, None);
    o.submit_job(request(&e), Some("enc".into())).unwrap();
    let err = o.run_job("enc").await.unwrap_err().to_string();
    assert!(err.contains("encode failed"), "{err}");
    // frames are kept for a later retry
    assert!(o.store().frame_path("enc", 0).exists());
}
