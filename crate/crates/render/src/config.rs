//! Service configuration: one TOML file plus `CADENCE_*` environment
//! overrides. Every field has a default, so an empty file is a valid
//! all-mock configuration.

use std::path::{Path, PathBuf};
use std::time::Duration;

use cadence_core::charcha::CharchaConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Endpoint {
    pub url: Option<String>,
    pub timeout_secs: f64,
    pub mock: bool,
}

impl Default for Endpoint {
    fn default() -> Self {
        Self {
            url: None,
            timeout_secs: 30.0,
            mock: true,
        }
    }
}

impl Endpoint {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Endpoints {
    pub generator: Endpoint,
    pub llm: Endpoint,
    pub embedding: Endpoint,
    pub face_verify: Endpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub jobs_dir: PathBuf,
    pub sessions_dir: PathBuf,
    pub traces_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            jobs_dir: "var/jobs".into(),
            sessions_dir: "var/sessions".into(),
            traces_dir: "var/traces".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VectorSpace {
    /// Keyframes are diffusion latents; decode renders a latent directly.
    Latent,
    /// The service only exposes prompt embeddings; decode runs a full
    /// generation from the interpolated embedding.
    PromptEmbedding,
}

/// Pass-through generation parameters plus orchestration knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSettings {
    pub space: VectorSpace,
    pub latent_dim: usize,
    pub steps: u32,
    pub guidance_scale: f64,
    pub width: u32,
    pub height: u32,
    pub retries: u32,
    pub backoff_ms: u64,
    /// Artificial delay per mock decode; lets tests interrupt a render.
    pub mock_frame_delay_ms: u64,
}

impl Default for GeneratorSettings {
    fn default() -> Self {
        Self {
            space: VectorSpace::Latent,
            latent_dim: 256,
            steps: 25,
            guidance_scale: 7.5,
            width: 64,
            height: 36,
            retries: 3,
            backoff_ms: 200,
            mock_frame_delay_ms: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSettings {
    pub model: String,
    pub temperature: f64,
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self {
            model: "gpt-4o-mini".into(),
            temperature: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSettings {
    pub fps: f64,
    pub workers: usize,
    /// Weights file for the valence/arousal regressor; built-in heuristic
    /// weights are used when absent.
    pub emotion_weights: Option<PathBuf>,
    pub emotion_decay: f64,
    /// External encoder, e.g. `ffmpeg -framerate {fps} -i {frames}/%06d.png -i {audio} {out}`.
    pub encode_command: Option<String>,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            fps: 12.0,
            workers: 4,
            emotion_weights: None,
            emotion_decay: 1.0,
            encode_command: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointEntry {
    pub id: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoraEntry {
    pub id: String,
    #[serde(default)]
    pub character_token: Option<String>,
    #[serde(default = "default_lora_scale")]
    pub scale: f64,
}

pub const DEFAULT_LORA_SCALE: f64 = 0.8;

fn default_lora_scale() -> f64 {
    DEFAULT_LORA_SCALE
}

/// Token used for characters trained from a verified session's snapshots.
pub const DEFAULT_CHARACTER_TOKEN: &str = "sks person";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: String,
    pub paths: Paths,
    pub endpoints: Endpoints,
    pub generator: GeneratorSettings,
    pub llm: LlmSettings,
    pub render: RenderSettings,
    pub charcha: CharchaConfig,
    /// Appended to the built-in safety terms of every negative prompt.
    pub negative_prompt: Option<String>,
    pub character_token: String,
    pub session_ttl_secs: u64,
    pub checkpoints: Vec<CheckpointEntry>,
    pub loras: Vec<LoraEntry>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            paths: Paths::default(),
            endpoints: Endpoints::default(),
            generator: GeneratorSettings::default(),
            llm: LlmSettings::default(),
            render: RenderSettings::default(),
            charcha: CharchaConfig::default(),
            negative_prompt: None,
            character_token: DEFAULT_CHARACTER_TOKEN.into(),
            session_ttl_secs: 900,
            checkpoints: vec![
                CheckpointEntry {
                    id: "sd15-base".into(),
                    description: "general purpose base model".into(),
                },
                CheckpointEntry {
                    id: "sd15-animation".into(),
                    description: "cartoon and animation fine-tune".into(),
                },
            ],
            loras: Vec::new(),
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(ConfigError::Invalid(format!("{key}: expected a boolean, got {v:?}"))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse()
        .map_err(|_| ConfigError::Invalid(format!("{key}: cannot parse {v:?}")))
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let c: Self = toml::from_str(text)?;
        Ok(c)
    }

    /// Reads `path`, applies the process environment and validates.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut c = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.to_path_buf(),
                    source,
                })?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        c.apply_env(|k| std::env::var(k).ok())?;
        c.validate()?;
        Ok(c)
    }

    /// Applies `CADENCE_*` overrides read through `lookup`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(v) = lookup("CADENCE_LISTEN") {
            self.listen = v;
        }
        if let Some(v) = lookup("CADENCE_JOBS_DIR") {
            self.paths.jobs_dir = v.into();
        }
        if let Some(v) = lookup("CADENCE_SESSIONS_DIR") {
            self.paths.sessions_dir = v.into();
        }
        if let Some(v) = lookup("CADENCE_TRACES_DIR") {
            self.paths.traces_dir = v.into();
        }
        if let Some(v) = lookup("CADENCE_MOCK") {
            let m = parse_bool("CADENCE_MOCK", &v)?;
            for e in self.endpoints_mut() {
                e.1.mock = m;
            }
        }
        for (name, ep) in self.endpoints_mut() {
            let upper = name.to_ascii_uppercase();
            if let Some(v) = lookup(&format!("CADENCE_{upper}_URL")) {
                ep.url = Some(v);
            }
            let key = format!("CADENCE_{upper}_MOCK");
            if let Some(v) = lookup(&key) {
                ep.mock = parse_bool(&key, &v)?;
            }
            let key = format!("CADENCE_{upper}_TIMEOUT_SECS");
            if let Some(v) = lookup(&key) {
                ep.timeout_secs = parse_num(&key, &v)?;
            }
        }
        if let Some(v) = lookup("CADENCE_LLM_MODEL") {
            self.llm.model = v;
        }
        if let Some(v) = lookup("CADENCE_FPS") {
            self.render.fps = parse_num("CADENCE_FPS", &v)?;
        }
        if let Some(v) = lookup("CADENCE_MOCK_FRAME_DELAY_MS") {
            self.generator.mock_frame_delay_ms = parse_num("CADENCE_MOCK_FRAME_DELAY_MS", &v)?;
        }
        Ok(())
    }

    fn endpoints_mut(&mut self) -> [(&'static str, &mut Endpoint); 4] {
        let e = &mut self.endpoints;
        [
            ("generator", &mut e.generator),
            ("llm", &mut e.llm),
            ("embedding", &mut e.embedding),
            ("face_verify", &mut e.face_verify),
        ]
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let eps = &self.endpoints;
        for (name, ep) in [
            ("generator", &eps.generator),
            ("llm", &eps.llm),
            ("embedding", &eps.embedding),
            ("face_verify", &eps.face_verify),
        ] {
            if !(ep.timeout_secs > 0.0 && ep.timeout_secs.is_finite()) {
                return bad(format!("endpoints.{name}.timeout_secs must be positive"));
            }
            if !ep.mock && ep.url.as_deref().is_none_or(|u| u.trim().is_empty()) {
                return bad(format!("endpoints.{name}.url is required unless mock = true"));
            }
        }
        if !(self.render.fps > 0.0 && self.render.fps.is_finite()) {
            return bad("render.fps must be positive".into());
        }
        if self.render.workers == 0 {
            return bad("render.workers must be at least 1".into());
        }
        if self.generator.latent_dim == 0 {
            return bad("generator.latent_dim must be positive".into());
        }
        if self.generator.retries == 0 {
            return bad("generator.retries must be at least 1".into());
        }
        if self.checkpoints.is_empty() {
            return bad("at least one checkpoint must be registered".into());
        }
        for l in &self.loras {
            if !(l.scale > 0.0 && l.scale <= 1.0) {
                return bad(format!("lora {}: scale must lie in (0, 1]", l.id));
            }
            if l.id.starts_with("charcha:") {
                return bad(format!("lora {}: the charcha: prefix is reserved for verified sessions", l.id));
            }
        }
        Ok(())
    }

    pub fn checkpoint_ids(&self) -> Vec<String> {
        self.checkpoints.iter().map(|c| c.id.clone()).collect()
    }

    pub fn all_mock(&self) -> bool {
        let e = &self.endpoints;
        e.generator.mock && e.llm.mock && e.embedding.mock && e.face_verify.mock
    }
}
