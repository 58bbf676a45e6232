//! Storyboard compilation: lyric and emotion events are merged onto a
//! beat-snapped timeline, turned into one batched LLM request, and the
//! returned scene descriptions are decorated with emotion, style, character
//! and negative prompts.

mod merge;
mod prompt;
mod script;
mod transcript;

use thiserror::Error;

pub use merge::{boundary_candidates, merge_events, MergeConfig, MergedInterval};
pub use prompt::{
    build_prompt_request, parse_prompt_response, PromptItem, PromptRequest, PromptResponse,
};
pub use script::{
    compile_script, emotion_descriptor, fallback_prompt, style_tags_for, LoraSpec, PromptScript,
    ScriptConfig, ScriptGlobal, TimelineSegment, DEFAULT_NEGATIVE_PROMPT, SAFETY_TERMS,
    STYLE_PRESETS,
};
pub use transcript::{parse_transcript, LyricEvent, Transcript};

#[derive(Debug, Error)]
pub enum TimelineError {
    #[error("invalid transcript timestamps at segment indices {indices:?}")]
    InvalidTimestamps { indices: Vec<usize> },
    #[error("malformed transcript: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("invalid script: {0}")]
    InvalidScript(String),
}
