//! Request assembly for multi-image questions, answer extraction, and the
//! backend/dispatch layer that talks to a model.
//!
//! Answer extraction rules:
//! - multiple choice: ASCII punctuation becomes whitespace, then the first
//!   whitespace-separated token that is a single capital letter naming an
//!   option (`A`..`E`, limited to the number of options) wins;
//! - left/right: case-insensitive whole-word `left` / `right`, the last
//!   occurrence wins;
//! - free form: the trimmed text.
//!
//! Anything else is recorded as [`ParsedAnswer::ParseFailure`].

mod backend;
mod config;
mod dispatch;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use backend::{Backend, BackendReply, HttpBackend, MockBackend, OracleMode};
pub use config::{BackendConfig, BackendKind};
pub use dispatch::{Budget, CostModel, Job, QueryRunner, RetryPolicy, RunLog, RunRecord};

use crate::error::PromptError;
use crate::render::{encode_png, AnnotatedFrame};
use image::RgbImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }

    pub fn flipped(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AnswerType {
    FreeForm,
    MultipleChoice { options: Vec<String>, gold_index: usize },
    LeftRight { gold: Side },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaItem {
    pub question_id: String,
    pub question: String,
    pub answer_type: AnswerType,
    /// Ground-truth answers; free-form items may carry several.
    pub references: Vec<String>,
}

pub const MAX_OPTIONS: usize = 5;
const OPTION_LETTERS: [char; MAX_OPTIONS] = ['A', 'B', 'C', 'D', 'E'];

impl QaItem {
    pub fn left_right(id: impl Into<String>, question: impl Into<String>, gold: Side) -> Self {
        Self {
            question_id: id.into(),
            question: question.into(),
            answer_type: AnswerType::LeftRight { gold },
            references: vec![gold.as_str().to_string()],
        }
    }

    pub fn multiple_choice(
        id: impl Into<String>,
        question: impl Into<String>,
        options: Vec<String>,
        gold_index: usize,
    ) -> Self {
        let references = options.get(gold_index).cloned().into_iter().collect();
        Self {
            question_id: id.into(),
            question: question.into(),
            answer_type: AnswerType::MultipleChoice { options, gold_index },
            references,
        }
    }

    pub fn free_form(id: impl Into<String>, question: impl Into<String>, references: Vec<String>) -> Self {
        Self {
            question_id: id.into(),
            question: question.into(),
            answer_type: AnswerType::FreeForm,
            references,
        }
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        let bad = |reason: &str| {
            Err(PromptError::InvalidItem {
                id: self.question_id.clone(),
                reason: reason.into(),
            })
        };
        match &self.answer_type {
            AnswerType::MultipleChoice { options, gold_index } => {
                if options.len() < 2 || options.len() > MAX_OPTIONS {
                    return bad("multiple choice needs 2 to 5 options");
                }
                if *gold_index >= options.len() {
                    return bad("gold index out of range");
                }
            }
            AnswerType::FreeForm if self.references.is_empty() => {
                return bad("free-form item needs at least one reference")
            }
            _ => {}
        }
        Ok(())
    }

    /// The canonical correct answer.
    pub fn gold(&self) -> ParsedAnswer {
        match &self.answer_type {
            AnswerType::FreeForm => ParsedAnswer::Text(self.references.first().cloned().unwrap_or_default()),
            AnswerType::MultipleChoice { gold_index, .. } => ParsedAnswer::Choice(*gold_index),
            AnswerType::LeftRight { gold } => ParsedAnswer::Side(*gold),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ParsedAnswer {
    Text(String),
    Choice(usize),
    Side(Side),
    ParseFailure(String),
}

impl ParsedAnswer {
    pub fn is_failure(&self) -> bool {
        matches!(self, ParsedAnswer::ParseFailure(_))
    }

    /// Shortest raw text that parses back to `self`.
    pub fn canonical_text(&self) -> String {
        match self {
            ParsedAnswer::Text(t) => t.clone(),
            ParsedAnswer::Choice(i) => OPTION_LETTERS[*i].to_string(),
            ParsedAnswer::Side(s) => s.as_str().to_string(),
            ParsedAnswer::ParseFailure(_) => String::new(),
        }
    }
}

pub fn parse_answer(raw: &str, answer_type: &AnswerType) -> ParsedAnswer {
    match answer_type {
        AnswerType::FreeForm => {
            let t = raw.trim();
            if t.is_empty() {
                ParsedAnswer::ParseFailure("empty answer".into())
            } else {
                ParsedAnswer::Text(t.to_string())
            }
        }
        AnswerType::MultipleChoice { options, .. } => {
            let n = options.len().min(MAX_OPTIONS);
            let cleaned: String = raw
                .chars()
                .map(|c| if c.is_ascii_punctuation() { ' ' } else { c })
                .collect();
            cleaned
                .split_whitespace()
                .find_map(|tok| {
                    let mut chars = tok.chars();
                    match (chars.next(), chars.next()) {
                        (Some(c), None) => OPTION_LETTERS[..n].iter().position(|&l| l == c),
                        _ => None,
                    }
                })
                .map(ParsedAnswer::Choice)
                .unwrap_or_else(|| ParsedAnswer::ParseFailure(format!("no option letter in {raw:?}")))
        }
        AnswerType::LeftRight { .. } => {
            let lower = raw.to_lowercase();
            lower
                .split(|c: char| !c.is_alphanumeric())
                .rev()
                .find_map(|w| match w {
                    "left" => Some(Side::Left),
                    "right" => Some(Side::Right),
                    _ => None,
                })
                .map(ParsedAnswer::Side)
                .unwrap_or_else(|| ParsedAnswer::ParseFailure(format!("no left/right in {raw:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub max_tokens: u32,
    pub temperature: f64,
}

impl Default for Generation {
    fn default() -> Self {
        Self {
            max_tokens: 64,
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedImage {
    pub media_type: String,
    #[serde(with = "b64")]
    pub data: Vec<u8>,
}

mod b64 {
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        base64::engine::general_purpose::STANDARD
            .decode(text)
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestPayload {
    pub question_id: String,
    pub template_id: String,
    pub system_text: String,
    pub user_text: String,
    /// In presentation order.
    pub images: Vec<EncodedImage>,
    pub generation: Generation,
}

impl RequestPayload {
    /// SHA-256 over everything that reaches the model (question id excluded).
    pub fn payload_hash(&self) -> String {
        let mut h = Sha256::new();
        for part in [&self.template_id, &self.system_text, &self.user_text] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        for img in &self.images {
            h.update((img.media_type.len() as u64).to_le_bytes());
            h.update(img.media_type.as_bytes());
            h.update((img.data.len() as u64).to_le_bytes());
            h.update(&img.data);
        }
        h.update(self.generation.max_tokens.to_le_bytes());
        h.update(self.generation.temperature.to_le_bytes());
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelAnswer {
    pub question_id: String,
    pub raw_text: String,
    pub parsed: ParsedAnswer,
    pub usage: Usage,
    pub latency_ms: u64,
    pub retry_count: u32,
}

/// A versioned prompt template.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Template {
    pub id: &'static str,
    pub system: &'static str,
    pub explains_marks: bool,
}

pub const TEMPLATES: [Template; 2] = [
    Template {
        id: "marks-v1",
        system: "You answer questions about a scene shown in several images.",
        explains_marks: true,
    },
    Template {
        id: "plain-v1",
        system: "You answer questions about a scene shown in several images.",
        explains_marks: false,
    },
];

pub const DEFAULT_TEMPLATE: &str = "marks-v1";

pub fn template(id: &str) -> Result<&'static Template, PromptError> {
    TEMPLATES
        .iter()
        .find(|t| t.id == id)
        .ok_or_else(|| PromptError::UnknownTemplate(id.to_string()))
}

fn format_instruction(answer_type: &AnswerType) -> String {
    match answer_type {
        AnswerType::FreeForm => "Answer with a short phrase.".to_string(),
        AnswerType::MultipleChoice { options, .. } => {
            let mut s = String::from("Options:\n");
            for (letter, opt) in OPTION_LETTERS.iter().zip(options) {
                s.push_str(&format!("{letter}. {opt}\n"));
            }
            s.push_str("Answer with the single letter of the correct option.");
            s
        }
        AnswerType::LeftRight { .. } => "Answer with exactly one word: left or right.".to_string(),
    }
}

pub fn user_text(tpl: &Template, item: &QaItem, image_count: usize) -> String {
    let mut s = format!("The {image_count} images are shown in capture order.\n");
    if tpl.explains_marks {
        s.push_str(
            "Some objects carry a numbered circular mark. A number marks the same object in every image it appears in.\n",
        );
    }
    s.push_str(&format!("Question: {}\n", item.question.trim()));
    s.push_str(&format_instruction(&item.answer_type));
    s
}

/// Builds the request for `item` over `frames` in their given order.
pub fn assemble_request(
    frames: &[AnnotatedFrame],
    item: &QaItem,
    template_id: &str,
) -> Result<RequestPayload, PromptError> {
    let images: Vec<&RgbImage> = frames.iter().map(|f| &f.image).collect();
    assemble_request_from_images(&images, item, template_id, Generation::default())
}

pub fn assemble_request_from_images(
    images: &[&RgbImage],
    item: &QaItem,
    template_id: &str,
    generation: Generation,
) -> Result<RequestPayload, PromptError> {
    let tpl = template(template_id)?;
    if images.is_empty() {
        return Err(PromptError::NoFrames);
    }
    item.validate()?;
    let encoded = images
        .iter()
        .map(|img| {
            encode_png(img)
                .map(|data| EncodedImage {
                    media_type: "image/png".into(),
                    data,
                })
                .map_err(|e| match e {
                    crate::error::RenderError::Encode(e) => PromptError::Encode(e),
                    other => PromptError::InvalidItem {
                        id: item.question_id.clone(),
                        reason: other.to_string(),
                    },
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RequestPayload {
        question_id: item.question_id.clone(),
        template_id: tpl.id.to_string(),
        system_text: tpl.system.to_string(),
        user_text: user_text(tpl, item, images.len()),
        images: encoded,
        generation,
    })
}
