//! Command-line front end. Every subcommand prints JSON on stdout; failures
//! print `{"error": {"kind", "message"}}` on stderr and exit nonzero.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use cadence_core::audio::{analyze, read_wav, write_wav, AnalysisBundle, AnalysisConfig, ANALYSIS_SAMPLE_RATE};
use cadence_core::charcha::replay::{parse_trace, replay};
use cadence_core::interp::build_frame_schedule;
use cadence_core::synth;
use cadence_core::timeline::PromptScript;
use cadence_render::evaluate::{reference_images, Evaluator};
use cadence_render::job::{JobRequest, TranscriptSource};
use cadence_render::{Orchestrator, ServiceConfig};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::api::{self, AppState};
use crate::traces::{synth_trace, TracePlan};

#[derive(Debug, Parser)]
#[command(name = "cadence", version, about = "Beat-synchronized music video renderer")]
pub struct Cli {
    /// Service configuration (TOML).
    #[arg(long, global = true, env = "CADENCE_CONFIG")]
    pub config: Option<PathBuf>,
    /// Use mock clients for every external service.
    #[arg(long, global = true)]
    pub mock: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the analysis bundle of a WAV file.
    Analyze { audio: PathBuf },
    /// Compile a prompt script from audio and a transcript.
    Compile {
        audio: PathBuf,
        transcript: PathBuf,
        #[arg(long)]
        story_hint: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Build the frame schedule of a compiled script.
    Schedule {
        script: PathBuf,
        /// Audio to analyze for the onset envelope.
        #[arg(long, conflicts_with = "analysis", required_unless_present = "analysis")]
        audio: Option<PathBuf>,
        /// Previously saved analysis bundle.
        #[arg(long)]
        analysis: Option<PathBuf>,
        #[arg(long, default_value_t = 12.0)]
        fps: f64,
    },
    /// Render a job described by a TOML job file, or resume one.
    Render {
        #[arg(required_unless_present = "resume")]
        job: Option<PathBuf>,
        #[arg(long, conflicts_with = "resume")]
        job_id: Option<String>,
        #[arg(long)]
        resume: Option<String>,
    },
    /// Run the HTTP/WebSocket gateway.
    CharchaServe {
        #[arg(long)]
        listen: Option<String>,
    },
    /// Replay a recorded session trace and print the report.
    CharchaReplay {
        trace: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a rendered job against reference images.
    Eval {
        job: String,
        references: PathBuf,
        #[arg(long, default_value = "participant")]
        participant: String,
    },
    /// Write a synthetic WAV file.
    Synth {
        kind: SynthKind,
        out: PathBuf,
        #[arg(long, default_value_t = 30.0)]
        seconds: f64,
        #[arg(long, default_value_t = 120.0)]
        bpm: f64,
    },
    /// Print a synthetic session trace (10 Hz).
    SynthTrace {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = "pass")]
        plan: String,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SynthKind {
    DemoSong,
    Metronome,
    Silence,
}

#[derive(Debug, Serialize)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    fn new(kind: &'static str, message: impl ToString) -> Self {
        Self {
            kind,
            message: message.to_string(),
        }
    }

    pub fn to_json(&self) -> String {
        json!({ "error": self }).to_string()
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn print<T: Serialize>(v: &T) -> CliResult {
    let s = serde_json::to_string_pretty(v).map_err(|e| CliError::new("internal", e))?;
    println!("{s}");
    Ok(())
}

fn read_text(p: &Path) -> CliResult<String> {
    std::fs::read_to_string(p).map_err(|e| CliError::new("io", format!("{}: {e}", p.display())))
}

pub fn load_config(cli: &Cli) -> CliResult<ServiceConfig> {
    let mut c = ServiceConfig::load(cli.config.as_deref()).map_err(|e| CliError::new("config", e))?;
    if cli.mock {
        c.apply_env(|k| (k == "CADENCE_MOCK").then(|| "true".to_string()))
            .map_err(|e| CliError::new("config", e))?;
    }
    Ok(c)
}

fn orchestrator(cli: &Cli) -> CliResult<Arc<Orchestrator>> {
    let c = load_config(cli)?;
    crate::build_orchestrator(c)
        .map(Arc::new)
        .map_err(|e| CliError::new("config", format!("{e:#}")))
}

fn analyze_file(audio: &Path) -> CliResult<AnalysisBundle> {
    let a = read_wav(audio).map_err(|e| CliError::new("audio", e))?;
    analyze(&a, &AnalysisConfig::default()).map_err(|e| CliError::new("analysis", e))
}

/// Makes relative paths in a job file relative to the file's directory.
pub fn resolve_job_paths(req: &mut JobRequest, base: &Path) {
    let fix = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    fix(&mut req.audio);
    if let Some(TranscriptSource::Path(p)) = &mut req.transcript {
        fix(p);
    }
    if let Some(p) = &mut req.va_track {
        fix(p);
    }
    if let Some(p) = &mut req.features {
        fix(p);
    }
}

pub fn load_job_file(path: &Path) -> CliResult<JobRequest> {
    let text = read_text(path)?;
    let mut req: JobRequest =
        toml::from_str(&text).map_err(|e| CliError::new("bad_request", format!("{}: {e}", path.display())))?;
    resolve_job_paths(&mut req, path.parent().unwrap_or(Path::new(".")));
    Ok(req)
}

pub async fn run(cli: Cli) -> CliResult {
    match &cli.command {
        Command::Analyze { audio } => print(&analyze_file(audio)?),
        Command::Compile {
            audio,
            transcript,
            story_hint,
            seed,
        } => {
            let o = orchestrator(&cli)?;
            let req = JobRequest {
                audio: audio.clone(),
                transcript: Some(TranscriptSource::Path(transcript.clone())),
                story_hint: story_hint.clone(),
                master_seed: *seed,
                ..JobRequest::default()
            };
            let job = o.prepare_job(req, None).map_err(|e| CliError::new("bad_request", e))?;
            let analysis = o.analyze(&job).await.map_err(|e| CliError::new("analysis", e))?;
            let script = o.compile(&job, &analysis).await.map_err(|e| CliError::new("compile", e))?;
            print(&script)
        }
        Command::Schedule {
            script,
            audio,
            analysis,
            fps,
        } => {
            let s: PromptScript =
                serde_json::from_str(&read_text(script)?).map_err(|e| CliError::new("bad_request", e))?;
            let bundle = match (audio, analysis) {
                (Some(a), _) => analyze_file(a)?,
                (None, Some(p)) => {
                    serde_json::from_str(&read_text(p)?).map_err(|e| CliError::new("bad_request", e))?
                }
                (None, None) => return Err(CliError::new("bad_request", "--audio or --analysis is required")),
            };
            let schedule = build_frame_schedule(&s, *fps, &bundle.onset).map_err(|e| CliError::new("schedule", e))?;
            print(&schedule)
        }
        Command::Render { job, job_id, resume } => {
            let o = orchestrator(&cli)?;
            let id = match (resume, job) {
                (Some(id), _) => id.clone(),
                (None, Some(path)) => {
                    let req = load_job_file(path)?;
                    let j = o.submit_job(req, job_id.clone()).map_err(|e| match e {
                        cadence_render::SubmitError::Consent(c) => CliError::new("consent_required", c),
                        other => CliError::new("bad_request", other),
                    })?;
                    j.id
                }
                (None, None) => return Err(CliError::new("bad_request", "a job file or --resume is required")),
            };
            let m = o.run_job(&id).await.map_err(|e| CliError::new("render", e))?;
            print(&json!({
                "job_id": m.job_id,
                "frames": m.frames.len(),
                "fps": m.fps,
                "duration": m.duration,
                "degraded": m.degraded,
                "digest": m.checksums.digest,
                "manifest": o.store().path(&id, "manifest.json"),
            }))
        }
        Command::CharchaServe { listen } => {
            let o = orchestrator(&cli)?;
            let addr = listen.clone().unwrap_or_else(|| o.config().listen.clone());
            let listener = tokio::net::TcpListener::bind(&addr)
                .await
                .map_err(|e| CliError::new("io", format!("bind {addr}: {e}")))?;
            let state = AppState::new(o);
            let resumed = state.resume_unfinished();
            tracing::info!(addr = %addr, resumed, "listening");
            let signal = async {
                #[cfg(unix)]
                {
                    use tokio::signal::unix::{signal, SignalKind};
                    match signal(SignalKind::terminate()) {
                        Ok(mut term) => {
                            tokio::select! {
                                _ = tokio::signal::ctrl_c() => {}
                                _ = term.recv() => {}
                            }
                        }
                        Err(_) => {
                            let _ = tokio::signal::ctrl_c().await;
                        }
                    }
                }
                #[cfg(not(unix))]
                let _ = tokio::signal::ctrl_c().await;
            };
            api::serve(listener, state, signal)
                .await
                .map_err(|e| CliError::new("io", e))
        }
        Command::CharchaReplay { trace, seed } => {
            let c = load_config(&cli)?;
            let t = parse_trace(&read_text(trace)?).map_err(|e| CliError::new("bad_request", e))?;
            let report = replay(&t, *seed, &c.charcha).map_err(|e| CliError::new("bad_request", e))?;
            print(&report)
        }
        Command::Eval {
            job,
            references,
            participant,
        } => {
            let o = orchestrator(&cli)?;
            let refs = reference_images(references).map_err(|e| CliError::new("bad_request", e))?;
            let ev = Evaluator {
                store: o.store(),
                clients: o.clients(),
                workers: o.config().render.workers,
            };
            let r = ev
                .evaluate(job, &refs, participant)
                .await
                .map_err(|e| CliError::new("eval", e))?;
            print(&r)
        }
        Command::Synth { kind, out, seconds, bpm } => {
            let sr = ANALYSIS_SAMPLE_RATE;
            let audio = match kind {
                SynthKind::DemoSong => synth::demo_song(*seconds, sr),
                SynthKind::Metronome => synth::metronome(*bpm, 0.0, *seconds, sr),
                SynthKind::Silence => synth::silence(*seconds, sr),
            };
            write_wav(out, &audio).map_err(|e| CliError::new("io", e))?;
            print(&json!({ "path": out, "seconds": audio.duration(), "sample_rate": sr }))
        }
        Command::SynthTrace { seed, plan } => {
            let c = load_config(&cli)?;
            let plan: TracePlan = plan.parse().map_err(|e: String| CliError::new("bad_request", e))?;
            print!("{}", synth_trace(*seed, plan, &c.charcha).to_ndjson());
            Ok(())
        }
    }
}
