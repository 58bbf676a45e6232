use serde::{Deserialize, Serialize};

use super::{MergedInterval, PromptResponse, TimelineError};
use crate::emotion::EmotionQuadrant;
use crate::seed;

/// Terms always present in the negative prompt. Callers may extend the list
/// but the compiled script never drops these.
pub const SAFETY_TERMS: &[&str] = &[
    "nsfw",
    "nudity",
    "explicit",
    "sexualized",
    "suggestive",
    "gore",
    "graphic violence",
    "harmful stereotypes",
    "racial caricature",
    "caricature",
    "whitewashing",
];

pub const DEFAULT_NEGATIVE_PROMPT: &str =
    "distorted anatomy, extra limbs, deformed face, blurry, low quality, watermark, text";

/// `(preset id, style tags)`.
pub const STYLE_PRESETS: &[(&str, &[&str])] = &[
    ("none", &[]),
    ("realistic", &["photorealistic", "detailed skin texture", "natural lighting", "35mm film"]),
    ("sketch", &["pencil sketch", "monochrome", "graphite on paper", "hand drawn lines"]),
    ("animation", &["western animation style", "bold outlines", "flat colors", "cartoon still"]),
    ("anime", &["anime style", "cel shading", "vivid colors"]),
    ("watercolor", &["watercolor painting", "soft washes", "paper texture"]),
];

pub fn style_tags_for(preset: &str) -> Option<Vec<String>> {
    STYLE_PRESETS
        .iter()
        .find(|(id, _)| *id == preset)
        .map(|(_, tags)| tags.iter().map(|t| t.to_string()).collect())
}

pub fn emotion_descriptor(q: EmotionQuadrant) -> &'static str {
    match q {
        EmotionQuadrant::Melancholy => "melancholic mood, muted colors, soft somber lighting",
        EmotionQuadrant::Serene => "serene mood, calm atmosphere, gentle warm light",
        EmotionQuadrant::Tense => "tense mood, dramatic atmosphere, hard contrasting shadows",
        EmotionQuadrant::Euphoric => "euphoric mood, vibrant saturated colors, radiant light",
    }
}

/// Template used when the LLM is unavailable or answers with the wrong
/// number of prompts.
pub fn fallback_prompt(segment: &MergedInterval) -> String {
    match &segment.lyric {
        Some(l) => format!("{} scene: {l}", segment.emotion),
        None => format!("{} scene: instrumental interlude", segment.emotion),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraSpec {
    pub id: String,
    pub scale: f64,
    /// Set for character LoRAs; the token is woven into every prompt.
    #[serde(default)]
    pub character_token: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptConfig {
    pub style_preset: String,
    /// Overrides the preset's tags when non-empty.
    #[serde(default)]
    pub style_tags: Vec<String>,
    /// Appended after the safety terms.
    #[serde(default)]
    pub negative_prompt: Option<String>,
    pub checkpoint_id: String,
    #[serde(default)]
    pub lora: Option<LoraSpec>,
    pub job_seed: u64,
}

impl ScriptConfig {
    pub fn new(checkpoint_id: impl Into<String>, job_seed: u64) -> Self {
        Self {
            style_preset: "none".into(),
            style_tags: Vec::new(),
            negative_prompt: None,
            checkpoint_id: checkpoint_id.into(),
            lora: None,
            job_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptGlobal {
    pub style_preset: String,
    pub style_tags: Vec<String>,
    pub character_token: Option<String>,
    pub checkpoint_id: String,
    pub lora: Option<LoraSpec>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineSegment {
    pub index: usize,
    pub start: f64,
    pub end: f64,
    pub lyric: Option<String>,
    pub emotion: EmotionQuadrant,
    /// Raw scene description before decoration.
    pub scene: String,
    pub prompt: String,
    pub negative_prompt: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptScript {
    pub duration: f64,
    pub global: ScriptGlobal,
    pub segments: Vec<TimelineSegment>,
    /// True when template prompts replaced the LLM output.
    pub degraded: bool,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl PromptScript {
    /// Checks tiling, seeding and the character/negative prompt invariants.
    pub fn validate(&self) -> Result<(), TimelineError> {
        let bad = |m: String| Err(TimelineError::InvalidScript(m));
        let Some(first) = self.segments.first() else {
            return bad("script has no segments".into());
        };
        if first.start != 0.0 {
            return bad(format!("first segment starts at {}", first.start));
        }
        let last = self.segments.last().expect("non-empty");
        if (last.end - self.duration).abs() > 1e-9 {
            return bad(format!("last segment ends at {} not {}", last.end, self.duration));
        }
        for (i, w) in self.segments.windows(2).enumerate() {
            if w[0].end != w[1].start {
                return bad(format!("gap or overlap between segments {i} and {}", i + 1));
            }
        }
        for s in &self.segments {
            if s.end <= s.start {
                return bad(format!("segment {} is empty", s.index));
            }
            if s.seed != seed::derive(self.global.seed, s.index as u64) {
                return bad(format!("segment {} seed is not derived from the job seed", s.index));
            }
            if let Some(tok) = &self.global.character_token {
                if !s.prompt.contains(tok.as_str()) {
                    return bad(format!("segment {} prompt lacks the character token", s.index));
                }
            }
            if let Some(term) = SAFETY_TERMS.iter().find(|t| !s.negative_prompt.contains(*t)) {
                return bad(format!("segment {} negative prompt lacks {term:?}", s.index));
            }
        }
        let lora_token = self.global.lora.as_ref().and_then(|l| l.character_token.as_ref());
        if lora_token != self.global.character_token.as_ref() {
            return bad("character token must match the configured character LoRA".into());
        }
        Ok(())
    }
}

fn negative_prompt(extra: Option<&str>) -> String {
    let mut s = SAFETY_TERMS.join(", ");
    let extra = extra.map(str::trim).unwrap_or(DEFAULT_NEGATIVE_PROMPT);
    if !extra.is_empty() {
        s.push_str(", ");
        s.push_str(extra);
    }
    s
}

/// Decorates scene descriptions into the final script. A response whose
/// cardinality differs from `segments` (or no response at all) falls back to
/// template prompts and marks the script degraded.
pub fn compile_script(
    segments: &[MergedInterval],
    response: Option<&PromptResponse>,
    config: &ScriptConfig,
    duration: f64,
) -> Result<PromptScript, TimelineError> {
    if segments.is_empty() {
        return Err(TimelineError::InvalidScript("no segments to compile".into()));
    }
    let style_tags = if config.style_tags.is_empty() {
        style_tags_for(&config.style_preset).ok_or_else(|| {
            TimelineError::InvalidScript(format!("unknown style preset {:?}", config.style_preset))
        })?
    } else {
        config.style_tags.clone()
    };
    let character_token = config
        .lora
        .as_ref()
        .and_then(|l| l.character_token.clone())
        .filter(|t| !t.trim().is_empty());
    if let (Some(l), None) = (&config.lora, &character_token) {
        if l.character_token.is_some() {
            return Err(TimelineError::InvalidScript("empty character token".into()));
        }
    }

    let mut warnings = Vec::new();
    let scenes: Vec<String> = match response {
        Some(r) if r.prompts.len() == segments.len() => r.prompts.clone(),
        other => {
            warnings.push(match other {
                Some(r) => format!(
                    "LLM returned {} prompts for {} segments; using template prompts",
                    r.prompts.len(),
                    segments.len()
                ),
                None => "no LLM response; using template prompts".to_string(),
            });
            segments.iter().map(fallback_prompt).collect()
        }
    };
    let degraded = !warnings.is_empty();
    let negative = negative_prompt(config.negative_prompt.as_deref());

    let out = segments
        .iter()
        .zip(scenes)
        .enumerate()
        .map(|(i, (seg, scene))| {
            let mut parts = vec![scene.trim().to_string()];
            if let Some(tok) = &character_token {
                parts.push(format!("featuring {tok}"));
            }
            parts.push(emotion_descriptor(seg.emotion).to_string());
            parts.extend(style_tags.iter().cloned());
            TimelineSegment {
                index: i,
                start: seg.start,
                end: seg.end,
                lyric: seg.lyric.clone(),
                emotion: seg.emotion,
                scene,
                prompt: parts.join(", "),
                negative_prompt: negative.clone(),
                seed: seed::derive(config.job_seed, i as u64),
            }
        })
        .collect();

    let script = PromptScript {
        duration,
        global: ScriptGlobal {
            style_preset: config.style_preset.clone(),
            style_tags,
            character_token,
            checkpoint_id: config.checkpoint_id.clone(),
            lora: config.lora.clone(),
            seed: config.job_seed,
        },
        segments: out,
        degraded,
        warnings,
    };
    script.validate()?;
    Ok(script)
}
