#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use cadence_core::audio::write_wav;
use cadence_core::charcha::replay::{parse_trace, Trace};
use cadence_core::charcha::wire::ServerMessage;
use cadence_core::synth;
use cadence_render::image::RgbImage;
use cadence_render::ServiceConfig;
use cadence_server::api::{self, AppState};
use futures::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::sync::oneshot;
use tokio::task::JoinHandle;
use tokio_tungstenite::tungstenite::Message;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn golden(plan: &str) -> Trace {
    let p = fixtures().join(format!("traces/golden-{plan}.ndjson"));
    parse_trace(&std::fs::read_to_string(p).unwrap()).unwrap()
}

pub fn config(root: &Path) -> ServiceConfig {
    let mut c = ServiceConfig::default();
    c.paths.jobs_dir = root.join("jobs");
    c.paths.sessions_dir = root.join("sessions");
    c.paths.traces_dir = root.join("traces");
    c
}

pub fn demo_wav(dir: &Path, seconds: f64) -> PathBuf {
    let p = dir.join(format!("demo-{seconds}.wav"));
    write_wav(&p, &synth::demo_song(seconds, 22_050)).unwrap();
    p
}

pub fn png() -> Vec<u8> {
    RgbImage::filled(8, 8, [120, 90, 60]).to_png().unwrap()
}

pub struct Server {
    pub addr: SocketAddr,
    pub state: AppState,
    pub http: reqwest::Client,
    stop: Option<oneshot::Sender<()>>,
    task: Option<JoinHandle<std::io::Result<()>>>,
}

impl Server {
    pub async fn start(config: ServiceConfig) -> Self {
        let o = Arc::new(cadence_server::build_orchestrator(config).unwrap());
        let state = AppState::new(o);
        state.resume_unfinished();
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = oneshot::channel();
        let task = tokio::spawn(api::serve(listener, state.clone(), async {
            let _ = rx.await;
        }));
        Self {
            addr,
            state,
            http: reqwest::Client::builder().no_proxy().build().unwrap(),
            stop: Some(tx),
            task: Some(task),
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }

    pub fn ws_url(&self, path: &str) -> String {
        format!("ws://{}{path}", self.addr)
    }

    pub async fn get(&self, path: &str) -> (u16, Value) {
        let r = self.http.get(self.url(path)).send().await.unwrap();
        let s = r.status().as_u16();
        (s, r.json().await.unwrap_or(Value::Null))
    }

    pub async fn post(&self, path: &str, body: &Value) -> (u16, Value) {
        let r = self.http.post(self.url(path)).json(body).send().await.unwrap();
        let s = r.status().as_u16();
        (s, r.json().await.unwrap_or(Value::Null))
    }

    pub async fn post_raw(&self, path: &str, body: Vec<u8>) -> (u16, Value) {
        let r = self.http.post(self.url(path)).body(body).send().await.unwrap();
        let s = r.status().as_u16();
        (s, r.json().await.unwrap_or(Value::Null))
    }

    pub async fn shutdown(mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.task.take() {
            tokio::time::timeout(Duration::from_secs(10), t)
                .await
                .expect("server drains")
                .unwrap()
                .unwrap();
        }
    }

    /// Polls until the job is terminal and returns its final status label.
    pub async fn wait_job(&self, id: &str) -> Value {
        for _ in 0..600 {
            let (s, v) = self.get(&format!("/jobs/{id}")).await;
            assert_eq!(s, 200, "{v}");
            let st = &v["progress"]["status"];
            if st["state"] == "done" || st["state"] == "failed" {
                return st.clone();
            }
            tokio::time::sleep(Duration::from_millis(50)).await;
        }
        panic!("job {id} did not finish");
    }

    /// Creates a session with the trace's seed, streams the trace over the
    /// socket and uploads every requested snapshot. Returns the session id,
    /// the verdict and the accepted upload tags.
    pub async fn run_session(&self, trace: &Trace) -> (String, Value, Vec<String>) {
        let seed = trace.header.as_ref().unwrap().seed;
        let (s, ticket) = self.post("/charcha/sessions", &json!({ "seed": seed })).await;
        assert_eq!(s, 201, "{ticket}");
        let id = ticket["id"].as_str().unwrap().to_string();
        let token = ticket["token"].as_str().unwrap().to_string();
        let url = self.ws_url(&format!("{}?token={token}", ticket["ws_path"].as_str().unwrap()));
        let (ws, _) = tokio_tungstenite::connect_async(url).await.unwrap();
        let (mut tx, mut rx) = ws.split();
        let lines: Vec<String> = trace.messages.iter().map(|m| serde_json::to_string(m).unwrap()).collect();
        let writer = tokio::spawn(async move {
            for l in lines {
                if tx.send(Message::Text(l.into())).await.is_err() {
                    break;
                }
            }
            tx
        });
        let mut uploaded = Vec::new();
        let mut verdict = Value::Null;
        while let Some(Ok(msg)) = rx.next().await {
            let Message::Text(text) = msg else { continue };
            let m: ServerMessage = serde_json::from_str(&text).expect("server messages follow the schema");
            match m {
                ServerMessage::CaptureRequest { tag, .. } => {
                    let path = format!("/charcha/sessions/{id}/snapshots/{tag}");
                    let r = self
                        .http
                        .post(self.url(&path))
                        .header("x-session-token", &token)
                        .body(png())
                        .send()
                        .await
                        .unwrap();
                    // the engine may reach a failing verdict before the upload lands
                    match r.status().as_u16() {
                        201 => uploaded.push(tag),
                        s => assert_eq!(s, 409, "snapshot {tag}"),
                    }
                }
                ServerMessage::Verdict(v) => {
                    verdict = serde_json::to_value(v).unwrap();
                    break;
                }
                _ => {}
            }
        }
        let _ = writer.await;
        (id, verdict, uploaded)
    }
}
