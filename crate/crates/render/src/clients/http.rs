//! HTTP clients. Request and response bodies are documented in
//! `docs/services.md`.

use std::time::Duration;

use async_trait::async_trait;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use cadence_core::timeline::{LoraSpec, PromptRequest};
use serde::Deserialize;
use serde_json::{json, Value};

use super::{
    Capabilities, ClientError, DecodeRequest, EmbeddingClient, FaceCheck, FaceVerifyClient, GeneratorClient,
    KeyframeRequest, LlmClient,
};
use crate::config::VectorSpace;

fn build_client(service: &'static str, timeout: Duration) -> Result<reqwest::Client, ClientError> {
    reqwest::Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| ClientError::Config(format!("{service}: {e}")))
}

fn join(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path.trim_start_matches('/'))
}

async fn post_json<T: for<'de> Deserialize<'de>>(
    client: &reqwest::Client,
    service: &'static str,
    url: &str,
    body: &Value,
) -> Result<T, ClientError> {
    let resp = client
        .post(url)
        .json(body)
        .send()
        .await
        .map_err(|e| ClientError::Unreachable {
            service,
            message: e.to_string(),
        })?;
    let status = resp.status();
    if status.is_server_error() {
        return Err(ClientError::Unreachable {
            service,
            message: format!("HTTP {status}"),
        });
    }
    if !status.is_success() {
        let text = resp.text().await.unwrap_or_default();
        return Err(ClientError::Protocol {
            service,
            message: format!("HTTP {status}: {text}"),
        });
    }
    resp.json::<T>().await.map_err(|e| ClientError::Protocol {
        service,
        message: e.to_string(),
    })
}

fn lora_json(lora: &Option<LoraSpec>) -> Value {
    match lora {
        Some(l) => json!([{ "name": l.id, "weight": l.scale }]),
        None => json!([]),
    }
}

pub struct HttpGenerator {
    client: reqwest::Client,
    base: String,
    space: VectorSpace,
    dim: usize,
}

impl HttpGenerator {
    pub fn new(base: String, timeout: Duration, space: VectorSpace, dim: usize) -> Result<Self, ClientError> {
        Ok(Self {
            client: build_client("generator", timeout)?,
            base,
            space,
            dim,
        })
    }
}

#[derive(Deserialize)]
struct VectorResponse {
    #[serde(alias = "latent", alias = "embedding")]
    vector: Vec<f64>,
}

#[derive(Deserialize)]
struct ImageResponse {
    /// Base64 PNG.
    image: String,
}

fn decode_b64(service: &'static str, s: &str) -> Result<Vec<u8>, ClientError> {
    B64.decode(s).map_err(|e| ClientError::Protocol {
        service,
        message: format!("image is not base64: {e}"),
    })
}

#[async_trait]
impl GeneratorClient for HttpGenerator {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            space: self.space,
            dim: self.dim,
        }
    }

    async fn keyframe(&self, req: &KeyframeRequest) -> Result<Vec<f64>, ClientError> {
        let body = json!({
            "prompt": req.prompt,
            "negative_prompt": req.negative_prompt,
            "seed": req.seed,
            "steps": req.steps,
            "guidance_scale": req.guidance_scale,
            "width": req.width,
            "height": req.height,
            "checkpoint": req.checkpoint_id,
            "lora": lora_json(&req.lora),
            "output": match self.space {
                VectorSpace::Latent => "latent",
                VectorSpace::PromptEmbedding => "prompt_embedding",
            },
        });
        let r: VectorResponse = post_json(&self.client, "generator", &join(&self.base, "keyframe"), &body).await?;
        if r.vector.len() != self.dim || r.vector.iter().any(|x| !x.is_finite()) {
            return Err(ClientError::Protocol {
                service: "generator",
                message: format!("expected {} finite values, got {}", self.dim, r.vector.len()),
            });
        }
        Ok(r.vector)
    }

    async fn decode(&self, vector: &[f64], req: &DecodeRequest) -> Result<Vec<u8>, ClientError> {
        let key = match self.space {
            VectorSpace::Latent => "latent",
            VectorSpace::PromptEmbedding => "prompt_embedding",
        };
        let body = json!({
            key: vector,
            "checkpoint": req.checkpoint_id,
            "lora": lora_json(&req.lora),
            "width": req.width,
            "height": req.height,
        });
        let r: ImageResponse = post_json(&self.client, "generator", &join(&self.base, "decode"), &body).await?;
        decode_b64("generator", &r.image)
    }
}

/// Chat-completions style endpoint.
pub struct HttpLlm {
    client: reqwest::Client,
    url: String,
    model: String,
    temperature: f64,
}

impl HttpLlm {
    pub fn new(url: String, timeout: Duration, model: String, temperature: f64) -> Result<Self, ClientError> {
        Ok(Self {
            client: build_client("llm", timeout)?,
            url,
            model,
            temperature,
        })
    }
}

#[async_trait]
impl LlmClient for HttpLlm {
    async fn complete(&self, req: &PromptRequest) -> Result<String, ClientError> {
        let body = json!({
            "model": self.model,
            "temperature": self.temperature,
            "messages": [
                { "role": "system", "content": req.system },
                { "role": "user", "content": req.user },
            ],
        });
        let v: Value = post_json(&self.client, "llm", &join(&self.url, "v1/chat/completions"), &body).await?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| ClientError::Protocol {
                service: "llm",
                message: "missing choices[0].message.content".into(),
            })
    }
}

pub struct HttpEmbedding {
    client: reqwest::Client,
    base: String,
}

impl HttpEmbedding {
    pub fn new(base: String, timeout: Duration) -> Result<Self, ClientError> {
        Ok(Self {
            client: build_client("embedding", timeout)?,
            base,
        })
    }
}

#[async_trait]
impl EmbeddingClient for HttpEmbedding {
    async fn embed_image(&self, png: &[u8]) -> Result<Vec<f64>, ClientError> {
        let body = json!({ "image": B64.encode(png) });
        let r: VectorResponse = post_json(&self.client, "embedding", &join(&self.base, "embed"), &body).await?;
        Ok(r.vector)
    }
}

pub struct HttpFaceVerify {
    client: reqwest::Client,
    base: String,
}

impl HttpFaceVerify {
    pub fn new(base: String, timeout: Duration) -> Result<Self, ClientError> {
        Ok(Self {
            client: build_client("face_verify", timeout)?,
            base,
        })
    }
}

#[async_trait]
impl FaceVerifyClient for HttpFaceVerify {
    async fn verify(&self, frame: &[u8], references: &[Vec<u8>]) -> Result<FaceCheck, ClientError> {
        let body = json!({
            "image": B64.encode(frame),
            "references": references.iter().map(|r| B64.encode(r)).collect::<Vec<_>>(),
        });
        let c: FaceCheck = post_json(&self.client, "face_verify", &join(&self.base, "verify"), &body).await?;
        if c.verified && !c.face_present {
            return Err(ClientError::Protocol {
                service: "face_verify",
                message: "verified without a face".into(),
            });
        }
        Ok(c)
    }
}
