//! Deterministic offline stand-ins. None of them perform I/O beyond an
//! optional sleep.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use async_trait::async_trait;
use cadence_core::timeline::PromptRequest;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::{
    Capabilities, ClientError, DecodeRequest, EmbeddingClient, FaceCheck, FaceVerifyClient, GeneratorClient,
    KeyframeRequest, LlmClient,
};
use crate::config::VectorSpace;
use crate::image::RgbImage;

/// Unit vector seeded by a SHA-256 of `(prompt, seed, checkpoint, lora id)`.
pub fn hash_unit_vector(req: &KeyframeRequest, dim: usize) -> Vec<f64> {
    let mut h = Sha256::new();
    for part in [
        req.prompt.as_bytes(),
        &req.seed.to_le_bytes(),
        req.checkpoint_id.as_bytes(),
        req.lora.as_ref().map(|l| l.id.as_bytes()).unwrap_or(b""),
    ] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part);
    }
    let key: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(key);
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Solid colour from the leading components plus a bottom row encoding the
/// SHA-256 of the vector bytes.
pub fn render_vector(vector: &[f64], width: u32, height: u32) -> RgbImage {
    let scale = (vector.len() as f64).sqrt();
    let channel = |i: usize| {
        let x = vector.get(i).copied().unwrap_or(0.0) * scale;
        (127.5 + 127.5 * x.tanh()).round() as u8
    };
    let mut img = RgbImage::filled(width, height.max(2), [channel(0), channel(1), channel(2)]);
    let mut h = Sha256::new();
    for x in vector {
        h.update(x.to_le_bytes());
    }
    let digest = h.finalize();
    let y = img.height - 1;
    for x in 0..img.width {
        let b = digest[x as usize % digest.len()];
        img.set(x, y, [b, b.rotate_left(3), b.rotate_left(5)]);
    }
    img
}

pub struct MockGenerator {
    space: VectorSpace,
    dim: usize,
    decode_delay: Duration,
}

impl MockGenerator {
    pub fn new(space: VectorSpace, dim: usize, decode_delay_ms: u64) -> Self {
        Self {
            space,
            dim,
            decode_delay: Duration::from_millis(decode_delay_ms),
        }
    }
}

#[async_trait]
impl GeneratorClient for MockGenerator {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            space: self.space,
            dim: self.dim,
        }
    }

    async fn keyframe(&self, req: &KeyframeRequest) -> Result<Vec<f64>, ClientError> {
        Ok(hash_unit_vector(req, self.dim))
    }

    async fn decode(&self, vector: &[f64], req: &DecodeRequest) -> Result<Vec<u8>, ClientError> {
        if !self.decode_delay.is_zero() {
            tokio::time::sleep(self.decode_delay).await;
        }
        render_vector(vector, req.width, req.height)
            .to_png()
            .map_err(|e| ClientError::Protocol {
                service: "generator",
                message: e.to_string(),
            })
    }
}

/// A generator whose every call fails, counting attempts.
#[derive(Default)]
pub struct UnreachableGenerator {
    pub calls: AtomicUsize,
}

impl UnreachableGenerator {
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn fail(&self) -> ClientError {
        self.calls.fetch_add(1, Ordering::SeqCst);
        ClientError::Unreachable {
            service: "generator",
            message: "connection refused".into(),
        }
    }
}

#[async_trait]
impl GeneratorClient for UnreachableGenerator {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            space: VectorSpace::Latent,
            dim: 256,
        }
    }

    async fn keyframe(&self, _: &KeyframeRequest) -> Result<Vec<f64>, ClientError> {
        Err(self.fail())
    }

    async fn decode(&self, _: &[f64], _: &DecodeRequest) -> Result<Vec<u8>, ClientError> {
        Err(self.fail())
    }
}

/// Answers with one scene per requested item, in the numbered format the
/// prompt asks for.
pub struct MockLlm;

#[async_trait]
impl LlmClient for MockLlm {
    async fn complete(&self, req: &PromptRequest) -> Result<String, ClientError> {
        let lines: Vec<String> = req
            .items
            .iter()
            .map(|it| {
                let mood = it.emotion.name().to_ascii_lowercase();
                match &it.lyric {
                    Some(l) => format!("{}. A {mood} scene that visualizes \"{}\"", it.index, l.trim()),
                    None => format!("{}. A wide {mood} landscape with no people, drifting light", it.index),
                }
            })
            .collect();
        Ok(lines.join("\n"))
    }
}

/// A failing LLM, for degraded-path tests.
pub struct UnavailableLlm;

#[async_trait]
impl LlmClient for UnavailableLlm {
    async fn complete(&self, _: &PromptRequest) -> Result<String, ClientError> {
        Err(ClientError::Unreachable {
            service: "llm",
            message: "connection refused".into(),
        })
    }
}

pub const MOCK_EMBEDDING_GRID: u32 = 4;

/// Content-based embedding: mean RGB over a 4×4 grid, offset so that no
/// image maps to the zero vector.
pub struct MockEmbedding;

pub fn grid_embedding(img: &RgbImage) -> Vec<f64> {
    let g = MOCK_EMBEDDING_GRID;
    let mut out = Vec::with_capacity((3 * g * g) as usize);
    for gy in 0..g {
        for gx in 0..g {
            let (x0, x1) = (gx * img.width / g, ((gx + 1) * img.width / g).max(gx * img.width / g + 1));
            let (y0, y1) = (gy * img.height / g, ((gy + 1) * img.height / g).max(gy * img.height / g + 1));
            let mut sum = [0.0; 3];
            let mut n = 0.0;
            for y in y0..y1.min(img.height) {
                for x in x0..x1.min(img.width) {
                    let p = img.pixel(x, y);
                    for c in 0..3 {
                        sum[c] += p[c] as f64;
                    }
                    n += 1.0;
                }
            }
            out.extend(sum.iter().map(|s| if n > 0.0 { s / n / 255.0 } else { 0.0 } + 0.01));
        }
    }
    out
}

#[async_trait]
impl EmbeddingClient for MockEmbedding {
    async fn embed_image(&self, png: &[u8]) -> Result<Vec<f64>, ClientError> {
        let img = RgbImage::from_png(png).map_err(|e| ClientError::Protocol {
            service: "embedding",
            message: e.to_string(),
        })?;
        Ok(grid_embedding(&img))
    }
}

/// Hash-based verdicts: about 90% of frames have a face and about 90% of
/// those match.
pub struct MockFaceVerify;

#[async_trait]
impl FaceVerifyClient for MockFaceVerify {
    async fn verify(&self, frame: &[u8], references: &[Vec<u8>]) -> Result<FaceCheck, ClientError> {
        let mut h = Sha256::new();
        h.update(frame);
        for r in references {
            h.update(Sha256::digest(r));
        }
        let d = h.finalize();
        let face_present = d[0] % 10 != 0;
        Ok(FaceCheck {
            face_present,
            verified: face_present && d[1] % 10 != 0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(prompt: &str, seed: u64) -> KeyframeRequest {
        KeyframeRequest {
            prompt: prompt.into(),
            negative_prompt: String::new(),
            seed,
            checkpoint_id: "sd15-base".into(),
            lora: None,
            steps: 25,
            guidance_scale: 7.5,
            width: 64,
            height: 36,
        }
    }

    fn cos(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn keyframes_are_deterministic_unit_vectors() {
        let a = hash_unit_vector(&req("a lighthouse", 3), 256);
        assert_eq!(a, hash_unit_vector(&req("a lighthouse", 3), 256));
        let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
        assert_ne!(a, hash_unit_vector(&req("a lighthouse", 4), 256));
    }

    #[test]
    fn distinct_prompts_are_nearly_orthogonal() {
        // |cos| of independent uniform unit vectors in 256 dims has sd 1/16,
        // so 0.5 is eight standard deviations out.
        for i in 0..100 {
            let a = hash_unit_vector(&req(&format!("scene {i}"), 1), 256);
            let b = hash_unit_vector(&req(&format!("scene {i} at night"), 1), 256);
            assert!(cos(&a, &b).abs() < 0.5, "pair {i}");
        }
    }

    #[tokio::test]
    async fn decode_and_embed_are_content_based() {
        let g = MockGenerator::new(VectorSpace::Latent, 256, 0);
        let d = DecodeRequest {
            checkpoint_id: "sd15-base".into(),
            lora: None,
            width: 32,
            height: 18,
        };
        let v = hash_unit_vector(&req("x", 1), 256);
        let png = g.decode(&v, &d).await.unwrap();
        assert_eq!(png, g.decode(&v, &d).await.unwrap());
        let e1 = MockEmbedding.embed_image(&png).await.unwrap();
        assert_eq!(e1.len(), 48);
        assert!(e1.iter().all(|x| *x > 0.0));
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        let e2 = MockEmbedding.embed_image(&g.decode(&neg, &d).await.unwrap()).await.unwrap();
        assert_ne!(e1, e2);
    }

    #[tokio::test]
    async fn mock_llm_answers_every_item() {
        use cadence_core::emotion::EmotionQuadrant;
        use cadence_core::timeline::{build_prompt_request, parse_prompt_response, MergedInterval};
        let segs = vec![
            MergedInterval {
                start: 0.0,
                end: 4.0,
                lyric: Some("hello sky".into()),
                emotion: EmotionQuadrant::Serene,
            },
            MergedInterval {
                start: 4.0,
                end: 8.0,
                lyric: None,
                emotion: EmotionQuadrant::Tense,
            },
        ];
        let r = build_prompt_request(&segs, None);
        let text = MockLlm.complete(&r).await.unwrap();
        assert_eq!(parse_prompt_response(&text).prompts.len(), 2);
    }
}
