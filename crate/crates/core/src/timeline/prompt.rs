use serde::{Deserialize, Serialize};

use super::MergedInterval;
use crate::emotion::EmotionQuadrant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptItem {
    /// 1-based, as shown to the model.
    pub index: usize,
    pub start: f64,
    pub end: f64,
    pub lyric: Option<String>,
    pub emotion: EmotionQuadrant,
}

/// One batched chat request covering every segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub system: String,
    pub user: String,
    pub items: Vec<PromptItem>,
}

impl PromptRequest {
    pub fn expected_count(&self) -> usize {
        self.items.len()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PromptResponse {
    pub prompts: Vec<String>,
}

const SYSTEM_INSTRUCTION: &str = "You write storyboards for music videos. \
You receive a numbered list of moments from one song. Each moment has a time range, \
the emotion of the music at that point (Melancholy, Serene, Tense or Euphoric) and the \
lyric sung there. Write one visual scene description per moment for a text-to-image model. \
Keep the scenes as one continuous story that follows the song from start to end. \
Show what a lyric means instead of repeating its words. \
A moment marked [instrumental] gets a scene that carries the emotion alone. \
Answer with exactly one numbered line per moment, in order, and nothing else.";

pub fn build_prompt_request(segments: &[MergedInterval], narrative_hint: Option<&str>) -> PromptRequest {
    let items: Vec<PromptItem> = segments
        .iter()
        .enumerate()
        .map(|(i, s)| PromptItem {
            index: i + 1,
            start: s.start,
            end: s.end,
            lyric: s.lyric.clone(),
            emotion: s.emotion,
        })
        .collect();

    let n = items.len();
    let mut user = format!("Song moments ({n}):\n");
    for it in &items {
        let lyric = match &it.lyric {
            Some(l) => format!("lyric: \"{}\"", l.replace('"', "'")),
            None => "[instrumental]".to_string(),
        };
        user.push_str(&format!(
            "{}. [{:.2}s-{:.2}s] emotion: {} | {}\n",
            it.index,
            it.start,
            it.end,
            it.emotion.name(),
            lyric
        ));
    }
    if let Some(hint) = narrative_hint.map(str::trim).filter(|h| !h.is_empty()) {
        user.push_str(&format!("Story hint: {hint}\n"));
    }
    user.push_str(&format!(
        "Return exactly {n} numbered scene descriptions, one per line."
    ));

    PromptRequest {
        system: SYSTEM_INSTRUCTION.to_string(),
        user,
        items,
    }
}

fn strip_number(line: &str) -> Option<&str> {
    let digits = line.len() - line.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits == 0 {
        return None;
    }
    let rest = &line[digits..];
    let rest = rest
        .strip_prefix('.')
        .or_else(|| rest.strip_prefix(')'))
        .or_else(|| rest.strip_prefix(':'))?;
    Some(rest.trim())
}

/// Extracts one prompt per line. Numbered lines (`1.`, `1)`, `1:`) are
/// preferred; without any numbered line every non-empty line counts.
pub fn parse_prompt_response(text: &str) -> PromptResponse {
    let lines: Vec<&str> = text
        .lines()
        .map(|l| l.trim().trim_start_matches(['-', '*']).trim())
        .filter(|l| !l.is_empty())
        .collect();
    let numbered: Vec<String> = lines
        .iter()
        .filter_map(|l| strip_number(l))
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    let prompts = if numbered.is_empty() {
        lines.into_iter().map(str::to_string).collect()
    } else {
        numbered
    };
    PromptResponse { prompts }
}
