//! Prompt templates and parsing of the `key: value` replies they request.
//!
//! Templates live under `templates/` as plain text with `{slot}` markers.
//! Substitution is single-pass, so slot-like text inside substituted
//! content is never expanded.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::QASample;

pub const VERIFICATION_TEMPLATE: &str = include_str!("../templates/verification.txt");
pub const HALLUCINATION_TEMPLATE: &str = include_str!("../templates/hallucination.txt");
pub const JSON_FIX_TEMPLATE: &str = include_str!("../templates/json_fix.txt");
pub const DETECTION_TEMPLATE: &str = include_str!("../templates/detection.txt");
pub const DETECTION_NO_QUESTION_TEMPLATE: &str =
    include_str!("../templates/detection_no_question.txt");
pub const FINETUNE_INPUT_TEMPLATE: &str = include_str!("../templates/finetune_input.txt");

pub const DETECTION_SYSTEM: &str =
    "You are a hallucination detector for retrieval-augmented generation.";

/// Version tag of each template, recorded in run manifests.
pub const TEMPLATE_VERSIONS: &[(&str, &str, &str)] = &[
    ("verification", "v1", VERIFICATION_TEMPLATE),
    ("hallucination", "v1", HALLUCINATION_TEMPLATE),
    ("json_fix", "v1", JSON_FIX_TEMPLATE),
    ("detection", "v1", DETECTION_TEMPLATE),
    ("detection_no_question", "v1", DETECTION_NO_QUESTION_TEMPLATE),
    ("finetune_input", "v1", FINETUNE_INPUT_TEMPLATE),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    pub user: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("sample has no evidence text")]
    EmptyEvidence,
    #[error("{0} must not be empty")]
    EmptyInput(&'static str),
}

fn is_slot_char(c: char) -> bool {
    c.is_ascii_lowercase() || c == '_'
}

/// Replace every `{name}` whose name is in `slots`. Other braces are kept.
pub fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let template = template.strip_suffix('\n').unwrap_or(template);
    let mut out = String::with_capacity(template.len() + slots.iter().map(|s| s.1.len()).sum::<usize>());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let name_len = after.find(|c: char| !is_slot_char(c)).unwrap_or(after.len());
        let name = &after[..name_len];
        let closes = after[name_len..].starts_with('}');
        match slots.iter().find(|(k, _)| *k == name) {
            Some((_, value)) if closes && name_len > 0 => {
                out.push_str(value);
                rest = &after[name_len + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// `{slot}` markers in `text` (lowercase identifiers only).
pub fn residual_slots(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let name_len = after.find(|c: char| !is_slot_char(c)).unwrap_or(after.len());
        if name_len > 0 && after[name_len..].starts_with('}') {
            out.push(after[..name_len].to_string());
        }
        rest = after;
    }
    out
}

fn evidence(sample: &QASample) -> Result<String, PromptError> {
    let text = sample.evidence_text();
    if text.trim().is_empty() {
        return Err(PromptError::EmptyEvidence);
    }
    Ok(text)
}

/// Verification prompt asking the model to justify `answer` against the
/// sample's evidence.
pub fn render_verification(sample: &QASample, answer: &str) -> Result<PromptText, PromptError> {
    let evidence_text = evidence(sample)?;
    Ok(PromptText {
        system: None,
        user: fill(
            VERIFICATION_TEMPLATE,
            &[
                ("question", &sample.question),
                ("evidence_text", &evidence_text),
                ("answer", answer),
            ],
        ),
    })
}

/// Hallucination prompt asking for a subtly wrong answer.
pub fn render_hallucination(sample: &QASample) -> Result<PromptText, PromptError> {
    let evidence_text = evidence(sample)?;
    Ok(PromptText {
        system: None,
        user: fill(
            HALLUCINATION_TEMPLATE,
            &[
                ("question", &sample.question),
                ("evidence_text", &evidence_text),
                ("answer", &sample.answer),
            ],
        ),
    })
}

/// Detector prompt requesting a `hallucination_list` object. An empty
/// question drops the question block.
pub fn render_detection(context: &str, question: &str, answer: &str) -> Result<PromptText, PromptError> {
    if context.trim().is_empty() {
        return Err(PromptError::EmptyInput("context"));
    }
    if answer.trim().is_empty() {
        return Err(PromptError::EmptyInput("answer"));
    }
    let user = if question.trim().is_empty() {
        fill(DETECTION_NO_QUESTION_TEMPLATE, &[("context", context), ("answer", answer)])
    } else {
        fill(
            DETECTION_TEMPLATE,
            &[("context", context), ("question", question), ("answer", answer)],
        )
    };
    Ok(PromptText { system: Some(DETECTION_SYSTEM.to_string()), user })
}

/// JSON-fix prompt with the malformed detector output appended.
pub fn render_json_fix(raw: &str) -> Result<PromptText, PromptError> {
    if raw.trim().is_empty() {
        return Err(PromptError::EmptyInput("raw output"));
    }
    Ok(PromptText { system: None, user: fill(JSON_FIX_TEMPLATE, &[("raw", raw)]) })
}

/// Input side of a supervised fine-tuning example.
pub fn render_finetune_input(question: &str, evidence_text: &str, answer: &str) -> String {
    fill(
        FINETUNE_INPUT_TEMPLATE,
        &[("question", question), ("evidence_text", evidence_text), ("answer", answer)],
    )
}

/// Which reply layout to expect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplySchema {
    Verification,
    Hallucination,
}

pub const KEY_ANSWER: &str = "answer";
pub const KEY_HALLUCINATED_ANSWER: &str = "hallucinated_answer";
pub const KEY_REASONING: &str = "reasoning";
pub const KEY_IS_HALLUCINATED: &str = "is_hallucinated";

impl ReplySchema {
    /// Keys in the order the template lists them. All are required.
    pub fn keys(self) -> &'static [&'static str] {
        match self {
            ReplySchema::Verification => &[KEY_ANSWER, KEY_REASONING, KEY_IS_HALLUCINATED],
            ReplySchema::Hallucination => &[
                KEY_ANSWER,
                KEY_HALLUCINATED_ANSWER,
                KEY_REASONING,
                KEY_IS_HALLUCINATED,
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KeyMatching {
    /// Case-insensitive, tolerant of markdown bold and list bullets.
    #[default]
    Lenient,
    /// Lowercase key at the start of the line, immediately followed by `:`.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReplyError {
    #[error("reply is missing field `{0}`")]
    MissingField(&'static str),
    #[error("field `{key}` has unparseable value {value:?}")]
    FieldFormat { key: &'static str, value: String },
}

/// Parsed `key: value` reply. `is_hallucinated` is stored as `"true"` or
/// `"false"`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredReply {
    pub fields: BTreeMap<String, String>,
    pub raw: String,
}

impl StructuredReply {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields.get(key).map(String::as_str)
    }

    pub fn is_hallucinated(&self) -> bool {
        self.get(KEY_IS_HALLUCINATED) == Some("true")
    }
}

fn match_key(line: &str, schema: ReplySchema, mode: KeyMatching) -> Option<(&'static str, &str)> {
    match mode {
        KeyMatching::Exact => schema.keys().iter().find_map(|k| {
            line.strip_prefix(k)
                .and_then(|r| r.strip_prefix(':'))
                .map(|v| (*k, v.trim()))
        }),
        KeyMatching::Lenient => {
            let s = line.trim_start();
            let s = s
                .strip_prefix("- ")
                .or_else(|| s.strip_prefix("* "))
                .unwrap_or(s);
            let s = s.trim_start_matches(['*', '_', '#', ' ']);
            let colon = s.find(':')?;
            let key = s[..colon].trim().trim_matches(['*', '_']).trim();
            let found = schema.keys().iter().find(|k| key.eq_ignore_ascii_case(k))?;
            let value = s[colon + 1..].trim_start_matches(['*', '_']).trim();
            Some((*found, value))
        }
    }
}

fn coerce_bool(value: &str) -> Option<bool> {
    let v = value.trim_matches(|c: char| c.is_whitespace() || matches!(c, '*' | '`' | '"' | '\'' | '.'));
    if v.eq_ignore_ascii_case("true") {
        Some(true)
    } else if v.eq_ignore_ascii_case("false") {
        Some(false)
    } else {
        None
    }
}

/// Extract the schema's fields from a reply.
///
/// A field's value runs from its key line until the next recognized key
/// line or the end of the text. The first occurrence of a key wins.
pub fn parse_reply_with(
    text: &str,
    schema: ReplySchema,
    mode: KeyMatching,
) -> Result<StructuredReply, ReplyError> {
    let mut fields: BTreeMap<String, String> = BTreeMap::new();
    let mut current: Option<&'static str> = None;
    for line in text.lines() {
        if let Some((key, value)) = match_key(line, schema, mode) {
            if fields.contains_key(key) {
                current = None;
            } else {
                fields.insert(key.to_string(), value.to_string());
                current = Some(key);
            }
        } else if let Some(key) = current {
            let v = fields.get_mut(key).expect("current key inserted");
            v.push('\n');
            v.push_str(line);
        }
    }
    for v in fields.values_mut() {
        let trimmed = v.trim();
        if trimmed.len() != v.len() {
            *v = trimmed.to_string();
        }
    }
    for key in schema.keys() {
        if !fields.contains_key(*key) {
            return Err(ReplyError::MissingField(key));
        }
    }
    let flag = fields.get_mut(KEY_IS_HALLUCINATED).expect("checked above");
    match coerce_bool(flag) {
        Some(b) => *flag = if b { "true" } else { "false" }.to_string(),
        None => {
            return Err(ReplyError::FieldFormat { key: KEY_IS_HALLUCINATED, value: flag.clone() })
        }
    }
    Ok(StructuredReply { fields, raw: text.to_string() })
}

pub fn parse_reply(text: &str, schema: ReplySchema) -> Result<StructuredReply, ReplyError> {
    parse_reply_with(text, schema, KeyMatching::Lenient)
}

/// Render a field map in the template's output layout.
pub fn format_reply(schema: ReplySchema, fields: &BTreeMap<String, String>) -> String {
    let mut out = String::new();
    for key in schema.keys() {
        out.push_str(key);
        out.push_str(": ");
        if let Some(v) = fields.get(*key) {
            out.push_str(v);
        }
        out.push('\n');
    }
    out
}
