//! Teacher prompt templates and the response grammars the stages parse.
//!
//! Templates use `{slot}` placeholders. The generate template may only
//! reference `{audio}`, so no transcription can reach the teacher during
//! caption generation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::CritiqueStatus;

const GENERATE_SLOTS: &[&str] = &["audio"];
const CRITIQUE_SLOTS: &[&str] = &["audio", "caption"];
const EXPAND_SLOTS: &[&str] = &["audio", "caption", "max_pairs"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptTemplates {
    pub template_id: String,
    pub generate_template: String,
    pub critique_template: String,
    pub expand_template: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            template_id: "default-v1".into(),
            generate_template: "Listen to the audio clip at {audio}. Describe only what is \
                audible: environmental sounds, music, the acoustic setting, and paralinguistic \
                cues such as tone, pace and vocal emotion. Do not transcribe speech and do not \
                mention anything you cannot hear."
                .into(),
            critique_template: "Audio: {audio}\nCaption: {caption}\n\nListen to the audio again \
                and audit the caption. Remove any descriptor not supported by an audible cue. \
                Reply with exactly one line:\nACCEPT\nREVISE: <corrected caption>\n\
                REJECT: <reason>"
                .into(),
            expand_template: "Audio: {audio}\nAudited caption: {caption}\n\nWrite between 1 and \
                {max_pairs} instruction-response pairs about this audio, grounded only in the \
                caption. Use this format for each pair:\nQ: <instruction>\nA: <response>"
                .into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("templates.{template} uses slot {{{slot}}}, allowed slots are {allowed:?}")]
    ForbiddenSlot {
        template: &'static str,
        slot: String,
        allowed: &'static [&'static str],
    },
    #[error("templates.template_id must be non-empty")]
    EmptyId,
}

/// `{identifier}` placeholders in order of appearance.
fn slots(template: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                let name = &after[..close];
                if !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                    out.push(name);
                }
                rest = &after[close + 1..];
            }
            None => break,
        }
    }
    out
}

fn render(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = template.to_owned();
    for (slot, value) in values {
        out = out.replace(&format!("{{{slot}}}"), value);
    }
    out
}

impl PromptTemplates {
    pub fn validate(&self) -> Result<(), TemplateError> {
        if self.template_id.is_empty() {
            return Err(TemplateError::EmptyId);
        }
        let checks: [(&'static str, &str, &'static [&'static str]); 3] = [
            ("generate_template", &self.generate_template, GENERATE_SLOTS),
            ("critique_template", &self.critique_template, CRITIQUE_SLOTS),
            ("expand_template", &self.expand_template, EXPAND_SLOTS),
        ];
        for (template, text, allowed) in checks {
            if let Some(slot) = slots(text).into_iter().find(|s| !allowed.contains(s)) {
                return Err(TemplateError::ForbiddenSlot {
                    template,
                    slot: slot.to_owned(),
                    allowed,
                });
            }
        }
        Ok(())
    }

    pub fn generate_prompt(&self, audio_uri: &str) -> String {
        render(&self.generate_template, &[("audio", audio_uri)])
    }

    pub fn critique_prompt(&self, audio_uri: &str, caption: &str) -> String {
        render(
            &self.critique_template,
            &[("audio", audio_uri), ("caption", caption)],
        )
    }

    pub fn expand_prompt(&self, audio_uri: &str, caption: &str, max_pairs: usize) -> String {
        render(
            &self.expand_template,
            &[
                ("audio", audio_uri),
                ("caption", caption),
                ("max_pairs", &max_pairs.to_string()),
            ],
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unrecognized critique verdict")]
pub struct VerdictError;

/// Parse a critique verdict: `ACCEPT`, `REVISE: <caption>` or
/// `REJECT: <reason>`. Leading and trailing whitespace is ignored.
pub fn parse_verdict(response: &str) -> Result<CritiqueStatus, VerdictError> {
    let text = response.trim();
    if text == "ACCEPT" {
        return Ok(CritiqueStatus::Accepted);
    }
    if let Some(rest) = text.strip_prefix("REVISE:") {
        let caption = rest.trim();
        if caption.is_empty() {
            return Err(VerdictError);
        }
        return Ok(CritiqueStatus::Revised(caption.to_owned()));
    }
    if let Some(rest) = text.strip_prefix("REJECT:") {
        return Ok(CritiqueStatus::Rejected(rest.trim().to_owned()));
    }
    Err(VerdictError)
}

/// Parse `Q:` / `A:` blocks. Continuation lines extend the current field.
/// Pairs with an empty side are dropped; at most `max_pairs` are returned.
pub fn parse_instruction_pairs(response: &str, max_pairs: usize) -> Vec<(String, String)> {
    enum Field {
        None,
        Question,
        Answer,
    }
    let mut pairs = Vec::new();
    let mut question = String::new();
    let mut answer = String::new();
    let mut field = Field::None;

    let mut flush = |q: &mut String, a: &mut String| {
        let (qt, at) = (q.trim(), a.trim());
        if !qt.is_empty() && !at.is_empty() {
            pairs.push((qt.to_owned(), at.to_owned()));
        }
        q.clear();
        a.clear();
    };

    for line in response.lines() {
        let trimmed = line.trim_start();
        if let Some(rest) = trimmed.strip_prefix("Q:") {
            flush(&mut question, &mut answer);
            question.push_str(rest.trim());
            field = Field::Question;
        } else if let Some(rest) = trimmed.strip_prefix("A:") {
            if !answer.is_empty() {
                // a second answer without a question starts nothing new
                answer.push('\n');
            }
            answer.push_str(rest.trim());
            field = Field::Answer;
        } else if !trimmed.is_empty() {
            let target = match field {
                Field::Question => &mut question,
                Field::Answer => &mut answer,
                Field::None => continue,
            };
            target.push('\n');
            target.push_str(trimmed.trim_end());
        }
    }
    flush(&mut question, &mut answer);
    pairs.truncate(max_pairs);
    pairs
}
