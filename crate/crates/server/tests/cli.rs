mod common;

use std::path::Path;
use std::process::{Command, Output};

use cadence_core::charcha::replay::parse_trace;
use cadence_core::charcha::CharchaConfig;
use cadence_server::traces::{synth_trace, TracePlan};
use common::fixtures;
use serde_json::Value;

fn cadence(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cadence"))
        .current_dir(cwd)
        .args(args)
        .env_remove("CADENCE_CONFIG")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout_json(o: &Output) -> Value {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn stderr_error(o: &Output) -> Value {
    assert!(!o.status.success());
    let last = String::from_utf8_lossy(&o.stderr).lines().last().unwrap().to_string();
    serde_json::from_str::<Value>(&last).unwrap()["error"].clone()
}

#[test]
fn committed_goldens_match_the_generator() {
    let cfg = CharchaConfig::default();
    for (plan, seed) in [("pass", 1), ("boundary6", 2), ("score5", 3), ("retry-pass", 4)] {
        let p = fixtures().join(format!("traces/golden-{plan}.ndjson"));
        let committed = parse_trace(&std::fs::read_to_string(p).unwrap()).unwrap();
        assert_eq!(synth_trace(seed, plan.parse::<TracePlan>().unwrap(), &cfg), committed, "{plan}");
    }
}

#[test]
fn replay_prints_the_verdict_and_scores() {
    let dir = tempfile::tempdir().unwrap();
    let golden = fixtures().join("traces/golden-pass.ndjson");
    let r = stdout_json(&cadence(dir.path(), &["charcha-replay", golden.to_str().unwrap()]));
    assert_eq!(r["verdict"]["passed"], true);
    assert_eq!(r["verdict"]["scores"].as_array().unwrap().len(), 6);

    let e = stderr_error(&cadence(dir.path(), &["charcha-replay", "absent.ndjson"]));
    assert_eq!(e["kind"], "io");
}

#[test]
fn silence_analyzes_to_an_empty_beat_grid() {
    let dir = tempfile::tempdir().unwrap();
    let s = stdout_json(&cadence(dir.path(), &["synth", "silence", "quiet.wav", "--seconds", "12"]));
    assert_eq!(s["seconds"], 12.0);
    let a = stdout_json(&cadence(dir.path(), &["analyze", "quiet.wav"]));
    assert_eq!(a["beats"]["beat_times"], serde_json::json!([]));
    assert!((a["duration"].as_f64().unwrap() - 12.0).abs() < 1e-9);
}

#[test]
fn render_fixture_then_compile_and_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let job = fixtures().join("render.toml");
    let r = stdout_json(&cadence(dir.path(), &["--mock", "render", job.to_str().unwrap(), "--job-id", "fixture"]));
    let fps = r["fps"].as_f64().unwrap();
    assert_eq!(r["frames"].as_u64().unwrap(), (10.0 * fps).round() as u64);
    assert!(dir.path().join("var/jobs/fixture/manifest.json").is_file());

    let again = stderr_error(&cadence(dir.path(), &["--mock", "render", job.to_str().unwrap(), "--job-id", "fixture"]));
    assert_eq!(again["kind"], "bad_request");
    let resumed = stdout_json(&cadence(dir.path(), &["--mock", "render", "--resume", "fixture"]));
    assert_eq!(resumed["digest"], r["digest"]);

    let audio = fixtures().join("demo-10s.wav");
    let transcript = fixtures().join("transcript.json");
    let out = cadence(dir.path(), &["--mock", "compile", audio.to_str().unwrap(), transcript.to_str().unwrap(), "--seed", "3"]);
    let script = stdout_json(&out);
    assert!(!script["segments"].as_array().unwrap().is_empty());
    std::fs::write(dir.path().join("script.json"), &out.stdout).unwrap();

    let sched = stdout_json(&cadence(
        dir.path(),
        &["schedule", "script.json", "--audio", audio.to_str().unwrap(), "--fps", "8"],
    ));
    assert_eq!(sched["entries"].as_array().unwrap().len(), 80);
}

#[test]
fn eval_against_reference_images() {
    let dir = tempfile::tempdir().unwrap();
    let job = fixtures().join("render.toml");
    stdout_json(&cadence(dir.path(), &["--mock", "render", job.to_str().unwrap(), "--job-id", "e"]));
    let refs = dir.path().join("refs");
    std::fs::create_dir(&refs).unwrap();
    std::fs::copy(dir.path().join("var/jobs/e/frames/000000.png"), refs.join("a.png")).unwrap();
    let r = stdout_json(&cadence(dir.path(), &["--mock", "eval", "e", "refs", "--participant", "p1"]));
    assert_eq!(r["participant"], "p1");
    assert_eq!(r["similarity"]["points"].as_array().unwrap().len(), 10);

    let e = stderr_error(&cadence(dir.path(), &["--mock", "eval", "missing", "refs"]));
    assert_eq!(e["kind"], "eval");
}
