//! Templates, demonstrations, and prompt composition.
//!
//! A demonstration is one pool pair verbalized through a template. A prompt
//! is the ordered concatenation of demonstrations and the sample's own
//! instruction+input, joined by the template separator, with exact token
//! accounting for every part.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{PoolEntry, Sample};
use crate::tokenizer::{Tokenizer, TokenizerError};

pub const INPUT_PLACEHOLDER: &str = "{x}";
pub const LABEL_PLACEHOLDER: &str = "{y}";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template pattern must contain {placeholder} exactly once, found {found}")]
    BadPlaceholder { placeholder: &'static str, found: usize },
    #[error("demonstration pair has an empty {0} field")]
    EmptyField(&'static str),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error("template file: {0}")]
    Io(#[from] std::io::Error),
    #[error("template file: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Verbalization rule: a pattern with one input and one label placeholder,
/// plus the separator inserted between prompt parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TemplateRecord", into = "TemplateRecord")]
pub struct Template {
    pattern: String,
    separator: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TemplateRecord {
    pattern: String,
    separator: String,
}

impl TryFrom<TemplateRecord> for Template {
    type Error = String;
    fn try_from(rec: TemplateRecord) -> Result<Self, Self::Error> {
        Template::new(&rec.pattern, &rec.separator).map_err(|e| e.to_string())
    }
}

impl From<Template> for TemplateRecord {
    fn from(t: Template) -> Self {
        TemplateRecord { pattern: t.pattern, separator: t.separator }
    }
}

impl Template {
    pub fn new(pattern: &str, separator: &str) -> Result<Self, PromptError> {
        for (placeholder, name) in [(INPUT_PLACEHOLDER, "{x}"), (LABEL_PLACEHOLDER, "{y}")] {
            let found = pattern.matches(placeholder).count();
            if found != 1 {
                return Err(PromptError::BadPlaceholder { placeholder: name, found });
            }
        }
        Ok(Template {
            pattern: pattern.to_string(),
            separator: separator.to_string(),
        })
    }

    pub fn from_json_path<P: AsRef<Path>>(path: P) -> Result<Self, PromptError> {
        let mut text = String::new();
        File::open(path)?.read_to_string(&mut text)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn pattern(&self) -> &str {
        &self.pattern
    }

    pub fn separator(&self) -> &str {
        &self.separator
    }

    fn render(&self, input: &str, label: &str) -> String {
        self.pattern
            .replacen(INPUT_PLACEHOLDER, input, 1)
            .replacen(LABEL_PLACEHOLDER, label, 1)
    }
}

/// One rendered input-output pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub text: String,
    pub source_id: String,
    pub token_count: u32,
}

/// Whether demonstrations are concatenated before or after the task body.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemoPlacement {
    #[default]
    BeforeBase,
    AfterBase,
}

/// A fully composed prompt with its token accounting.
///
/// `total_tokens` is always `base_tokens + sum(demo token counts) +
/// one separator per demonstration`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub sample_id: String,
    pub base: String,
    pub text: String,
    pub demos: Vec<Demonstration>,
    pub base_tokens: u32,
    pub total_tokens: u32,
}

impl PromptSpec {
    /// Demonstration spend for this prompt: everything except the task body.
    pub fn demo_tokens(&self) -> u32 {
        self.total_tokens - self.base_tokens
    }
}

/// Parsed reply from a generalist model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOutput {
    pub text: String,
    pub predicted_label: PredictedLabel,
    pub usage_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictedLabel {
    Label(String),
    /// The reply contained no recognizable label.
    ParseFailure,
}

impl PredictedLabel {
    pub fn matches(&self, label: &str) -> bool {
        matches!(self, PredictedLabel::Label(l) if l == label)
    }
}

/// Verbalize one pool pair through the template.
pub fn render_demonstration(
    template: &Template,
    entry: &PoolEntry,
    tokenizer: &Tokenizer,
) -> Result<Demonstration, PromptError> {
    if entry.input.is_empty() {
        return Err(PromptError::EmptyField("input"));
    }
    if entry.label.is_empty() {
        return Err(PromptError::EmptyField("label"));
    }
    let text = template.render(&entry.input, &entry.label);
    let token_count = tokenizer.count(&text)?;
    Ok(Demonstration {
        text,
        source_id: entry.id.clone(),
        token_count,
    })
}

/// Concatenate demonstrations and the task body in order, demonstrations
/// first, separated by the template separator.
pub fn compose_prompt(
    sample_id: &str,
    base: &str,
    demos: Vec<Demonstration>,
    template: &Template,
    tokenizer: &Tokenizer,
) -> Result<PromptSpec, PromptError> {
    compose_prompt_placed(sample_id, base, demos, template, tokenizer, DemoPlacement::BeforeBase)
}

/// As [`compose_prompt`] with an explicit demonstration placement.
pub fn compose_prompt_placed(
    sample_id: &str,
    base: &str,
    demos: Vec<Demonstration>,
    template: &Template,
    tokenizer: &Tokenizer,
    placement: DemoPlacement,
) -> Result<PromptSpec, PromptError> {
    let base_tokens = tokenizer.count(base)?;
    let separator_tokens = tokenizer.count(template.separator())?;
    let mut total = base_tokens;
    for demo in &demos {
        total += demo.token_count + separator_tokens;
    }

    let mut parts: Vec<&str> = Vec::with_capacity(demos.len() + 1);
    match placement {
        DemoPlacement::BeforeBase => {
            parts.extend(demos.iter().map(|d| d.text.as_str()));
            parts.push(base);
        }
        DemoPlacement::AfterBase => {
            parts.push(base);
            parts.extend(demos.iter().map(|d| d.text.as_str()));
        }
    }
    let text = parts.join(template.separator());

    Ok(PromptSpec {
        sample_id: sample_id.to_string(),
        base: base.to_string(),
        text,
        demos,
        base_tokens,
        total_tokens: total,
    })
}

/// Render the given pool entries and compose the prompt for a sample in one
/// step. Entries are used in the order given.
pub fn build_prompt(
    sample: &Sample,
    entries: &[&PoolEntry],
    template: &Template,
    tokenizer: &Tokenizer,
    placement: DemoPlacement,
) -> Result<PromptSpec, PromptError> {
    let demos = entries
        .iter()
        .map(|entry| render_demonstration(template, entry, tokenizer))
        .collect::<Result<Vec<_>, _>>()?;
    compose_prompt_placed(&sample.id, &sample.base_text(), demos, template, tokenizer, placement)
}
