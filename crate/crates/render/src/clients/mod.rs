//! Boundaries to the external services: image generator, LLM, image
//! embedder and face verifier. Each has an HTTP implementation and a
//! deterministic offline mock; [`Clients::from_config`] picks per endpoint.

use std::sync::Arc;

use async_trait::async_trait;
use cadence_core::timeline::{LoraSpec, PromptRequest};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ServiceConfig, VectorSpace};

mod http;
pub mod mock;

pub use http::{HttpEmbedding, HttpFaceVerify, HttpGenerator, HttpLlm};
pub use mock::{MockEmbedding, MockFaceVerify, MockGenerator, MockLlm};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClientError {
    #[error("{service} unreachable: {message}")]
    Unreachable { service: &'static str, message: String },
    #[error("{service} returned an invalid response: {message}")]
    Protocol { service: &'static str, message: String },
    #[error("{0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Capabilities {
    pub space: VectorSpace,
    pub dim: usize,
}

/// Everything the generator needs for one keyframe. Identical requests must
/// yield identical vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeRequest {
    pub prompt: String,
    pub negative_prompt: String,
    pub seed: u64,
    pub checkpoint_id: String,
    pub lora: Option<LoraSpec>,
    pub steps: u32,
    pub guidance_scale: f64,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeRequest {
    pub checkpoint_id: String,
    pub lora: Option<LoraSpec>,
    pub width: u32,
    pub height: u32,
}

#[async_trait]
pub trait GeneratorClient: Send + Sync {
    fn capabilities(&self) -> Capabilities;

    async fn keyframe(&self, req: &KeyframeRequest) -> Result<Vec<f64>, ClientError>;

    /// Renders an interpolated vector; returns PNG bytes.
    async fn decode(&self, vector: &[f64], req: &DecodeRequest) -> Result<Vec<u8>, ClientError>;
}

#[async_trait]
pub trait LlmClient: Send + Sync {
    /// Returns the raw completion text.
    async fn complete(&self, req: &PromptRequest) -> Result<String, ClientError>;
}

#[async_trait]
pub trait EmbeddingClient: Send + Sync {
    async fn embed_image(&self, png: &[u8]) -> Result<Vec<f64>, ClientError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaceCheck {
    pub face_present: bool,
    pub verified: bool,
}

#[async_trait]
pub trait FaceVerifyClient: Send + Sync {
    /// Detects a face in `frame` and checks it against the references in a
    /// single call.
    async fn verify(&self, frame: &[u8], references: &[Vec<u8>]) -> Result<FaceCheck, ClientError>;
}

#[derive(Clone)]
pub struct Clients {
    pub generator: Arc<dyn GeneratorClient>,
    pub llm: Arc<dyn LlmClient>,
    pub embedding: Arc<dyn EmbeddingClient>,
    pub face_verify: Arc<dyn FaceVerifyClient>,
}

impl Clients {
    pub fn mock(config: &ServiceConfig) -> Self {
        let g = &config.generator;
        Self {
            generator: Arc::new(MockGenerator::new(g.space, g.latent_dim, g.mock_frame_delay_ms)),
            llm: Arc::new(MockLlm),
            embedding: Arc::new(MockEmbedding),
            face_verify: Arc::new(MockFaceVerify),
        }
    }

    /// Mock endpoints never touch the network; HTTP clients are only built
    /// for endpoints with `mock = false`.
    pub fn from_config(config: &ServiceConfig) -> Result<Self, ClientError> {
        let mut c = Self::mock(config);
        let e = &config.endpoints;
        let url = |name: &str, ep: &crate::config::Endpoint| {
            ep.url
                .clone()
                .ok_or_else(|| ClientError::Config(format!("endpoints.{name}.url is not set")))
        };
        if !e.generator.mock {
            c.generator = Arc::new(HttpGenerator::new(
                url("generator", &e.generator)?,
                e.generator.timeout(),
                config.generator.space,
                config.generator.latent_dim,
            )?);
        }
        if !e.llm.mock {
            c.llm = Arc::new(HttpLlm::new(
                url("llm", &e.llm)?,
                e.llm.timeout(),
                config.llm.model.clone(),
                config.llm.temperature,
            )?);
        }
        if !e.embedding.mock {
            c.embedding = Arc::new(HttpEmbedding::new(url("embedding", &e.embedding)?, e.embedding.timeout())?);
        }
        if !e.face_verify.mock {
            c.face_verify = Arc::new(HttpFaceVerify::new(
                url("face_verify", &e.face_verify)?,
                e.face_verify.timeout(),
            )?);
        }
        Ok(c)
    }
}
