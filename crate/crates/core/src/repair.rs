//! Lenient recovery of `{"hallucination_list": [...]}` verdicts from
//! detector output.
//!
//! [`repair`] runs a fixed pipeline and stops at the first stage that
//! yields a verdict:
//!
//! 1. strict parse of the exact schema,
//! 2. syntactic repair (missing commas between items and members, unclosed brackets,
//!    bare keys and values, trailing commas) followed by a strict parse,
//! 3. typed extraction of `span` fields from object items,
//! 4. extraction from prose lists (numbered, bulleted, line separated).
//!
//! When every stage fails the outcome is [`RepairMethod::NeedsLlm`] and the
//! caller may escalate with the JSON-fix prompt.

use alloc::borrow::ToOwned;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const LIST_KEY: &str = "hallucination_list";

/// Ordered hallucinated spans reported by a detector. Never contains an
/// empty string.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawVerdict", into = "RawVerdict")]
pub struct DetectorVerdict {
    spans: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct RawVerdict {
    hallucination_list: Vec<String>,
}

impl TryFrom<RawVerdict> for DetectorVerdict {
    type Error = EmptySpan;
    fn try_from(raw: RawVerdict) -> Result<Self, EmptySpan> {
        DetectorVerdict::new(raw.hallucination_list)
    }
}

impl From<DetectorVerdict> for RawVerdict {
    fn from(v: DetectorVerdict) -> Self {
        RawVerdict { hallucination_list: v.spans }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("hallucination spans must be non-empty")]
pub struct EmptySpan;

impl DetectorVerdict {
    pub fn new(spans: Vec<String>) -> Result<Self, EmptySpan> {
        if spans.iter().any(String::is_empty) {
            return Err(EmptySpan);
        }
        Ok(Self { spans })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn spans(&self) -> &[String] {
        &self.spans
    }

    pub fn into_spans(self) -> Vec<String> {
        self.spans
    }

    /// Response-level label: any span means hallucinated.
    pub fn is_hallucinated(&self) -> bool {
        !self.spans.is_empty()
    }

    /// Canonical `{"hallucination_list": [...]}` text.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&RawVerdict { hallucination_list: self.spans.clone() })
            .expect("string list always serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairMethod {
    Strict,
    Syntactic,
    TypedExtraction,
    ProseExtraction,
    /// Recovered by the JSON-fix prompt after deterministic stages failed.
    Llm,
    NeedsLlm,
}

impl RepairMethod {
    pub const ALL: [RepairMethod; 6] = [
        RepairMethod::Strict,
        RepairMethod::Syntactic,
        RepairMethod::TypedExtraction,
        RepairMethod::ProseExtraction,
        RepairMethod::Llm,
        RepairMethod::NeedsLlm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RepairMethod::Strict => "strict",
            RepairMethod::Syntactic => "syntactic",
            RepairMethod::TypedExtraction => "typed_extraction",
            RepairMethod::ProseExtraction => "prose_extraction",
            RepairMethod::Llm => "llm",
            RepairMethod::NeedsLlm => "needs_llm",
        }
    }
}

impl fmt::Display for RepairMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One rule applied while recovering a verdict.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum RepairNote {
    StrippedCodeFence,
    TrimmedLeadingText,
    TrimmedTrailingText,
    EscapedControlChar,
    ConvertedSingleQuotes,
    InsertedComma,
    ClosedString,
    ClosedBracket { bracket: char },
    DroppedStrayCloser { bracket: char },
    FilledMissingValue,
    QuotedKey { key: String },
    QuotedValue { value: String },
    ConvertedLiteral { from: String },
    RemovedComma,
    ExtractedSpanField { index: usize },
    ExtractedSoleField { index: usize, key: String },
    AliasedListKey { key: String },
    WrappedString,
    DroppedItem { index: usize, reason: String },
    StrippedPreamble { preamble: String },
    NumberedList,
    BulletList,
    LineList,
    NoHallucinationPhrase { phrase: String },
}

impl fmt::Display for RepairNote {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RepairNote::StrippedCodeFence => f.write_str("stripped code fence"),
            RepairNote::TrimmedLeadingText => f.write_str("trimmed text before JSON"),
            RepairNote::TrimmedTrailingText => f.write_str("trimmed text after JSON"),
            RepairNote::EscapedControlChar => f.write_str("escaped control character in string"),
            RepairNote::ConvertedSingleQuotes => f.write_str("converted single-quoted string"),
            RepairNote::InsertedComma => f.write_str("inserted missing comma"),
            RepairNote::ClosedString => f.write_str("closed unterminated string"),
            RepairNote::ClosedBracket { bracket } => write!(f, "closed unclosed {bracket}"),
            RepairNote::DroppedStrayCloser { bracket } => write!(f, "dropped stray {bracket}"),
            RepairNote::FilledMissingValue => f.write_str("filled missing value with null"),
            RepairNote::QuotedKey { key } => write!(f, "quoted bare key {key:?}"),
            RepairNote::QuotedValue { value } => write!(f, "quoted bare value {value:?}"),
            RepairNote::ConvertedLiteral { from } => write!(f, "converted literal {from}"),
            RepairNote::RemovedComma => f.write_str("removed dangling comma"),
            RepairNote::ExtractedSpanField { index } => write!(f, "item {index}: took span field"),
            RepairNote::ExtractedSoleField { index, key } => write!(f, "item {index}: took sole field {key:?}"),
            RepairNote::AliasedListKey { key } => write!(f, "read list from key {key:?}"),
            RepairNote::WrappedString => f.write_str("wrapped lone string as a list"),
            RepairNote::DroppedItem { index, reason } => write!(f, "item {index} dropped: {reason}"),
            RepairNote::StrippedPreamble { preamble } => write!(f, "stripped preamble {preamble:?}"),
            RepairNote::NumberedList => f.write_str("numbered list"),
            RepairNote::BulletList => f.write_str("bullet list"),
            RepairNote::LineList => f.write_str("line-separated list"),
            RepairNote::NoHallucinationPhrase { phrase } => {
                write!(f, "no-hallucination phrase {phrase:?}")
            }
        }
    }
}

/// Result of [`repair`]. `verdict` is `None` exactly when `method` is
/// [`RepairMethod::NeedsLlm`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairOutcome {
    pub verdict: Option<DetectorVerdict>,
    pub method: RepairMethod,
    pub trace: Vec<RepairNote>,
}

impl RepairOutcome {
    fn found(verdict: DetectorVerdict, method: RepairMethod, trace: Vec<RepairNote>) -> Self {
        Self { verdict: Some(verdict), method, trace }
    }
}

/// Phrase lists used by prose extraction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairConfig {
    /// Lowercase phrases meaning "nothing to report"; they map to an empty
    /// verdict when no list is present.
    pub no_hallucination_phrases: Vec<String>,
    /// Lowercase keywords marking `Something:` as a preamble to a list.
    pub preamble_keywords: Vec<String>,
}

impl Default for RepairConfig {
    fn default() -> Self {
        let owned = |xs: &[&str]| xs.iter().map(|s| (*s).to_owned()).collect();
        Self {
            no_hallucination_phrases: owned(&[
                "no hallucination",
                "no hallucinated",
                "no unsupported",
                "the answer is supported",
                "the response is supported",
                "fully supported by the context",
                "nothing is hallucinated",
            ]),
            preamble_keywords: owned(&[
                "hallucinat",
                "unsupported",
                "found",
                "spans",
                "items",
                "issues",
                "list",
            ]),
        }
    }
}

// ---------------------------------------------------------------------------
// Strict

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StrictError {
    #[error("not valid JSON")]
    Syntax,
    #[error("top level is not an object")]
    NotObject,
    #[error("missing `hallucination_list` key")]
    MissingKey,
    #[error("`hallucination_list` is not an array of strings")]
    NotStringArray,
    #[error("`hallucination_list` contains an empty span")]
    EmptySpan,
}

/// Accept only an object whose `hallucination_list` is an array of
/// non-empty strings. Other keys are ignored.
pub fn parse_strict(text: &str) -> Result<DetectorVerdict, StrictError> {
    let value: Value = serde_json::from_str(text).map_err(|_| StrictError::Syntax)?;
    let Value::Object(map) = value else {
        return Err(StrictError::NotObject);
    };
    let Some(Value::Array(items)) = map.get(LIST_KEY) else {
        return Err(if map.contains_key(LIST_KEY) {
            StrictError::NotStringArray
        } else {
            StrictError::MissingKey
        });
    };
    let mut spans = Vec::with_capacity(items.len());
    for item in items {
        match item {
            Value::String(s) if s.is_empty() => return Err(StrictError::EmptySpan),
            Value::String(s) => spans.push(s.clone()),
            _ => return Err(StrictError::NotStringArray),
        }
    }
    Ok(DetectorVerdict { spans })
}

// ---------------------------------------------------------------------------
// Syntactic

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Obj,
    Arr,
}

impl Kind {
    fn open(self) -> char {
        match self {
            Kind::Obj => '{',
            Kind::Arr => '[',
        }
    }
    fn close(self) -> char {
        match self {
            Kind::Obj => '}',
            Kind::Arr => ']',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Open(Kind),
    Close(Kind),
    Colon,
    Comma,
    /// `body` is already escaped for a double-quoted JSON string.
    Str { body: String, closed: bool },
    Bare(String),
}

impl Tok {
    fn ends_value(&self) -> bool {
        matches!(self, Tok::Str { .. } | Tok::Bare(_) | Tok::Close(_))
    }
    fn starts_value(&self) -> bool {
        matches!(self, Tok::Str { .. } | Tok::Bare(_) | Tok::Open(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Frame {
    Obj { expect_key: bool },
    Arr,
}

impl Frame {
    fn kind(self) -> Kind {
        match self {
            Frame::Obj { .. } => Kind::Obj,
            Frame::Arr => Kind::Arr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pos {
    Top,
    Key,
    Value,
    Item,
}

/// Container bookkeeping shared by the lexer and every pass. A closer pops
/// back to the nearest matching opener; a closer with no opener is
/// ignored.
#[derive(Debug, Default)]
struct Walker {
    stack: Vec<Frame>,
}

impl Walker {
    fn pos(&self) -> Pos {
        match self.stack.last() {
            None => Pos::Top,
            Some(Frame::Arr) => Pos::Item,
            Some(Frame::Obj { expect_key: true }) => Pos::Key,
            Some(Frame::Obj { expect_key: false }) => Pos::Value,
        }
    }

    /// Index of the frame a closer of `kind` would pop to.
    fn matching(&self, kind: Kind) -> Option<usize> {
        self.stack.iter().rposition(|f| f.kind() == kind)
    }

    fn step(&mut self, tok: &Tok) {
        match tok {
            Tok::Open(Kind::Obj) => self.stack.push(Frame::Obj { expect_key: true }),
            Tok::Open(Kind::Arr) => self.stack.push(Frame::Arr),
            Tok::Close(kind) => {
                if let Some(i) = self.matching(*kind) {
                    self.stack.truncate(i);
                }
            }
            Tok::Colon => {
                if let Some(Frame::Obj { expect_key }) = self.stack.last_mut() {
                    *expect_key = false;
                }
            }
            Tok::Comma => {
                if let Some(Frame::Obj { expect_key }) = self.stack.last_mut() {
                    *expect_key = true;
                }
            }
            Tok::Str { .. } | Tok::Bare(_) => {}
        }
    }
}

fn push_escaped(out: &mut String, c: char, notes: &mut Vec<RepairNote>) {
    match c {
        '\n' => out.push_str("\\n"),
        '\r' => out.push_str("\\r"),
        '\t' => out.push_str("\\t"),
        c if (c as u32) < 0x20 => {
            use core::fmt::Write;
            let _ = write!(out, "\\u{:04x}", c as u32);
        }
        _ => {
            out.push(c);
            return;
        }
    }
    if !notes.contains(&RepairNote::EscapedControlChar) {
        notes.push(RepairNote::EscapedControlChar);
    }
}

fn escape_plain(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            c => push_escaped(&mut out, c, &mut Vec::new()),
        }
    }
    out
}

struct Lexed {
    tokens: Vec<Tok>,
    trailing_trimmed: bool,
}

fn lex(text: &str, notes: &mut Vec<RepairNote>) -> Lexed {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut walker = Walker::default();
    let mut opened = false;
    let mut i = 0;
    let mut trailing_trimmed = false;

    while i < chars.len() {
        if opened && walker.stack.is_empty() {
            if chars[i..].iter().any(|c| !c.is_whitespace()) {
                trailing_trimmed = true;
            }
            break;
        }
        let c = chars[i];
        let pos = walker.pos();
        let tok = match c {
            c if c.is_whitespace() => {
                i += 1;
                continue;
            }
            '{' => {
                opened = true;
                i += 1;
                Tok::Open(Kind::Obj)
            }
            '[' => {
                opened = true;
                i += 1;
                Tok::Open(Kind::Arr)
            }
            '}' => {
                i += 1;
                Tok::Close(Kind::Obj)
            }
            ']' => {
                i += 1;
                Tok::Close(Kind::Arr)
            }
            ',' => {
                i += 1;
                Tok::Comma
            }
            ':' if matches!(pos, Pos::Key | Pos::Value) => {
                i += 1;
                Tok::Colon
            }
            '"' | '\'' => {
                let quote = c;
                if quote == '\'' {
                    notes.push(RepairNote::ConvertedSingleQuotes);
                }
                i += 1;
                let mut body = String::new();
                let mut closed = false;
                while i < chars.len() {
                    let ch = chars[i];
                    i += 1;
                    if ch == quote {
                        closed = true;
                        break;
                    }
                    match ch {
                        '\\' if i < chars.len() => {
                            let next = chars[i];
                            i += 1;
                            match next {
                                '\'' => body.push('\''),
                                '"' | '\\' | '/' | 'b' | 'f' | 'n' | 'r' | 't' | 'u' => {
                                    body.push('\\');
                                    body.push(next);
                                }
                                other => {
                                    body.push_str("\\\\");
                                    push_escaped(&mut body, other, notes);
                                }
                            }
                        }
                        '\\' => body.push_str("\\\\"),
                        '"' => body.push_str("\\\""),
                        other => push_escaped(&mut body, other, notes),
                    }
                }
                Tok::Str { body, closed }
            }
            _ => {
                let start = i;
                while i < chars.len() {
                    let ch = chars[i];
                    let stop = match pos {
                        Pos::Item => matches!(ch, ',' | ']' | '[' | '{' | '}' | '"' | '\n'),
                        Pos::Key => matches!(ch, ':' | ',' | '}' | '{' | '[' | ']' | '"' | '\n'),
                        Pos::Value => matches!(ch, ',' | '}' | ']' | '{' | '[' | '"' | '\n'),
                        Pos::Top => matches!(ch, ',' | ']' | '[' | '{' | '}' | '"' | ':' | '\n'),
                    };
                    if stop {
                        break;
                    }
                    i += 1;
                }
                let bare: String = chars[start..i].iter().collect::<String>().trim().to_string();
                if i == start {
                    // a lone stop character in a position where it is not
                    // structural, e.g. ':' inside an array
                    i += 1;
                    Tok::Bare(c.to_string())
                } else {
                    Tok::Bare(bare)
                }
            }
        };
        walker.step(&tok);
        tokens.push(tok);
    }
    Lexed { tokens, trailing_trimmed }
}

fn insert_missing_commas(tokens: Vec<Tok>, notes: &mut Vec<RepairNote>) -> Vec<Tok> {
    let mut out: Vec<Tok> = Vec::with_capacity(tokens.len());
    let mut walker = Walker::default();
    for tok in tokens {
        let missing = match walker.pos() {
            Pos::Item => tok.starts_value(),
            Pos::Value => matches!(tok, Tok::Str { .. } | Tok::Bare(_)),
            _ => false,
        };
        if missing && out.last().is_some_and(Tok::ends_value) {
            notes.push(RepairNote::InsertedComma);
            out.push(Tok::Comma);
            walker.step(&Tok::Comma);
        }
        walker.step(&tok);
        out.push(tok);
    }
    out
}

fn close_unclosed(tokens: Vec<Tok>, notes: &mut Vec<RepairNote>) -> Vec<Tok> {
    let mut out: Vec<Tok> = Vec::with_capacity(tokens.len() + 2);
    let mut walker = Walker::default();
    for tok in tokens {
        if let Tok::Close(kind) = tok {
            match walker.matching(kind) {
                None => {
                    notes.push(RepairNote::DroppedStrayCloser { bracket: kind.close() });
                    continue;
                }
                Some(i) => {
                    // close anything opened after the matching frame
                    for frame in walker.stack[i + 1..].iter().rev() {
                        let k = frame.kind();
                        notes.push(RepairNote::ClosedBracket { bracket: k.open() });
                        out.push(Tok::Close(k));
                    }
                }
            }
        }
        walker.step(&tok);
        out.push(tok);
    }
    if let Some(Tok::Str { closed, .. }) = out.last_mut() {
        if !*closed {
            *closed = true;
            notes.push(RepairNote::ClosedString);
        }
    }
    match walker.stack.last() {
        Some(Frame::Obj { expect_key: false }) if out.last() == Some(&Tok::Colon) => {
            notes.push(RepairNote::FilledMissingValue);
            out.push(Tok::Bare("null".into()));
        }
        Some(Frame::Obj { expect_key: true })
            if matches!(out.last(), Some(Tok::Str { .. } | Tok::Bare(_))) =>
        {
            notes.push(RepairNote::FilledMissingValue);
            out.push(Tok::Colon);
            out.push(Tok::Bare("null".into()));
        }
        _ => {}
    }
    for frame in walker.stack.iter().rev() {
        let k = frame.kind();
        notes.push(RepairNote::ClosedBracket { bracket: k.open() });
        out.push(Tok::Close(k));
    }
    out
}

fn json_literal(bare: &str) -> Option<&'static str> {
    match bare {
        "true" | "false" | "null" => None,
        "True" => Some("true"),
        "False" => Some("false"),
        "None" | "NULL" | "Null" => Some("null"),
        _ => None,
    }
}

fn is_json_scalar(bare: &str) -> bool {
    matches!(bare, "true" | "false" | "null")
        || matches!(serde_json::from_str::<Value>(bare), Ok(Value::Number(_)))
}

fn quote_bare(tokens: Vec<Tok>, notes: &mut Vec<RepairNote>) -> Vec<Tok> {
    let mut walker = Walker::default();
    let mut out = Vec::with_capacity(tokens.len());
    for tok in tokens {
        let pos = walker.pos();
        let tok = match tok {
            Tok::Bare(b) if pos == Pos::Key => {
                notes.push(RepairNote::QuotedKey { key: b.clone() });
                Tok::Str { body: escape_plain(&b), closed: true }
            }
            Tok::Bare(b) if is_json_scalar(&b) => Tok::Bare(b),
            Tok::Bare(b) => match json_literal(&b) {
                Some(lit) => {
                    notes.push(RepairNote::ConvertedLiteral { from: b });
                    Tok::Bare(lit.into())
                }
                None => {
                    notes.push(RepairNote::QuotedValue { value: b.clone() });
                    Tok::Str { body: escape_plain(&b), closed: true }
                }
            },
            other => other,
        };
        walker.step(&tok);
        out.push(tok);
    }
    out
}

fn remove_dangling_commas(tokens: Vec<Tok>, notes: &mut Vec<RepairNote>) -> Vec<Tok> {
    let mut out: Vec<Tok> = Vec::with_capacity(tokens.len());
    for (i, tok) in tokens.iter().enumerate() {
        if *tok == Tok::Comma {
            let prev_ok = out.last().is_some_and(|p| !matches!(p, Tok::Open(_) | Tok::Comma | Tok::Colon));
            let next_ok = tokens.get(i + 1).is_some_and(|n| !matches!(n, Tok::Close(_) | Tok::Comma));
            if !(prev_ok && next_ok) {
                notes.push(RepairNote::RemovedComma);
                continue;
            }
        }
        out.push(tok.clone());
    }
    out
}

fn render(tokens: &[Tok]) -> String {
    let mut out = String::new();
    for tok in tokens {
        match tok {
            Tok::Open(k) => out.push(k.open()),
            Tok::Close(k) => out.push(k.close()),
            Tok::Colon => out.push_str(": "),
            Tok::Comma => out.push_str(", "),
            Tok::Str { body, .. } => {
                out.push('"');
                out.push_str(body);
                out.push('"');
            }
            Tok::Bare(b) => out.push_str(b),
        }
    }
    out
}

/// Body of the first fenced code block, if the text has one.
fn strip_code_fence(text: &str) -> Option<&str> {
    let start = text.find("```")?;
    let after = &text[start + 3..];
    // skip the info string (e.g. `json`) up to the end of the line
    let body_start = after.find('\n').map(|n| n + 1).unwrap_or(0);
    let body = &after[body_start..];
    let end = body.find("```").unwrap_or(body.len());
    Some(&body[..end])
}

struct Syntactic {
    text: String,
    notes: Vec<RepairNote>,
    changed: bool,
    /// The structure did not start the (fence-stripped) text.
    leading_trimmed: bool,
}

fn syntactic(text: &str) -> Syntactic {
    let mut notes = Vec::new();
    let mut body = text;
    if let Some(inner) = strip_code_fence(text) {
        notes.push(RepairNote::StrippedCodeFence);
        body = inner;
    }
    let Some(start) = body.find(['{', '[']) else {
        return Syntactic { text: text.to_string(), notes: Vec::new(), changed: false, leading_trimmed: false };
    };
    let leading_trimmed = !body[..start].trim().is_empty();
    if leading_trimmed {
        notes.push(RepairNote::TrimmedLeadingText);
    }
    let lexed = lex(&body[start..], &mut notes);
    if lexed.trailing_trimmed {
        notes.push(RepairNote::TrimmedTrailingText);
    }
    // fixed order: commas, closers, quoting, dangling commas
    let tokens = insert_missing_commas(lexed.tokens, &mut notes);
    let tokens = close_unclosed(tokens, &mut notes);
    let tokens = quote_bare(tokens, &mut notes);
    let tokens = remove_dangling_commas(tokens, &mut notes);
    if notes.is_empty() {
        return Syntactic { text: text.to_string(), notes, changed: false, leading_trimmed };
    }
    Syntactic { text: render(&tokens), notes, changed: true, leading_trimmed }
}

/// Apply the syntactic fixes. Text without any `{` or `[`, or text that
/// needs no fixing, comes back unchanged.
pub fn repair_syntactic(text: &str) -> String {
    syntactic(text).text
}

// ---------------------------------------------------------------------------
// Typed extraction

/// Key fragments that mark an object field as a stand-in for
/// `hallucination_list`.
const LIST_KEY_HINTS: [&str; 4] = ["list", "hallucinat", "span", "item"];

/// The lone array-valued field of `map` whose name looks like a list key.
fn aliased_list(map: &serde_json::Map<String, Value>) -> Option<(&String, &Vec<Value>)> {
    let mut arrays = map.iter().filter_map(|(k, v)| match v {
        Value::Array(items) => Some((k, items)),
        _ => None,
    });
    let (key, items) = arrays.next()?;
    if arrays.next().is_some() {
        return None;
    }
    let lower = key.to_lowercase();
    LIST_KEY_HINTS.iter().any(|h| lower.contains(h)).then_some((key, items))
}

/// The only non-empty string field of `obj` other than `type`, if the
/// object has exactly one field besides `type`.
fn sole_string_field(obj: &serde_json::Map<String, Value>) -> Option<(&String, &String)> {
    let mut rest = obj.iter().filter(|(k, _)| k.as_str() != "type");
    let (key, value) = rest.next()?;
    if rest.next().is_some() {
        return None;
    }
    match value {
        Value::String(s) if !s.is_empty() => Some((key, s)),
        _ => None,
    }
}

/// Pull spans out of a parsed value whose list items are strings or
/// objects with a `span` field. Accepts an object holding
/// `hallucination_list` (or a single list-like array field in its place)
/// or a bare top-level array. A lone string under the key is a single
/// span. Objects without `span` contribute their sole
/// string field. Items that yield no span are dropped and noted.
pub fn extract_typed(value: &Value) -> Option<(DetectorVerdict, Vec<RepairNote>)> {
    let mut notes = Vec::new();
    let items = match value {
        Value::Object(map) => match map.get(LIST_KEY) {
            Some(Value::Array(items)) => items,
            Some(Value::String(s)) => {
                notes.push(RepairNote::WrappedString);
                let spans = if s.trim().is_empty() { Vec::new() } else { alloc::vec![s.clone()] };
                return Some((DetectorVerdict { spans }, notes));
            }
            Some(_) => return None,
            None => {
                let (key, items) = aliased_list(map)?;
                notes.push(RepairNote::AliasedListKey { key: key.clone() });
                items
            }
        },
        Value::Array(items) => items,
        _ => return None,
    };
    let mut spans = Vec::new();
    for (index, item) in items.iter().enumerate() {
        let dropped = |reason: &str| RepairNote::DroppedItem { index, reason: reason.into() };
        match item {
            Value::String(s) if !s.is_empty() => spans.push(s.clone()),
            Value::String(_) => notes.push(dropped("empty string")),
            Value::Object(obj) => match obj.get("span") {
                Some(Value::String(s)) if !s.is_empty() => {
                    notes.push(RepairNote::ExtractedSpanField { index });
                    spans.push(s.clone());
                }
                Some(Value::String(_)) => notes.push(dropped("empty span")),
                Some(_) => notes.push(dropped("span is not a string")),
                None => match sole_string_field(obj) {
                    Some((key, s)) => {
                        notes.push(RepairNote::ExtractedSoleField { index, key: key.clone() });
                        spans.push(s.clone());
                    }
                    None => notes.push(dropped("object without span")),
                },
            },
            _ => notes.push(dropped("not a string or object")),
        }
    }
    Some((DetectorVerdict { spans }, notes))
}

// ---------------------------------------------------------------------------
// Prose extraction

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("no recognizable list in detector output")]
pub struct NoListFound;

fn unquote(item: &str) -> &str {
    let t = item.trim();
    for (open, close) in [('"', '"'), ('\u{201C}', '\u{201D}'), ('\'', '\'')] {
        if t.len() >= 2 * open.len_utf8() && t.starts_with(open) && t.ends_with(close) {
            let inner = &t[open.len_utf8()..t.len() - close.len_utf8()];
            if !inner.contains(open) {
                return inner.trim();
            }
        }
    }
    t
}

fn finish_items<'a>(items: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    items
        .into_iter()
        .map(unquote)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

fn strip_emphasis(line: &str) -> &str {
    line.trim().trim_matches(['*', '_', '#', ' '])
}

/// Split off a leading `Header:` line or `Keyword ...:` prefix.
fn split_preamble<'a>(text: &'a str, config: &RepairConfig) -> (Option<&'a str>, &'a str) {
    let first_end = text.find('\n').unwrap_or(text.len());
    let first = &text[..first_end];
    if strip_emphasis(first).ends_with(':') {
        return (Some(first.trim()), &text[first_end..]);
    }
    if let Some(colon) = first.find(':') {
        let prefix = first[..colon].to_lowercase();
        let starts_list = first.trim_start().starts_with(['•', '-', '*'])
            || first.trim_start().starts_with(|c: char| c.is_ascii_digit());
        if !starts_list && config.preamble_keywords.iter().any(|k| prefix.contains(k.as_str())) {
            return (Some(first[..=colon].trim()), &text[colon + 1..]);
        }
    }
    (None, text)
}

/// Byte ranges of `1.`/`1)` style markers numbered 1, 2, 3, ... in order.
fn numbered_markers(body: &str) -> Vec<(usize, usize)> {
    let bytes = body.as_bytes();
    let mut out = Vec::new();
    let mut expected = 1u32;
    let mut delim: Option<u8> = None;
    let mut i = 0;
    while i < bytes.len() {
        let boundary = i == 0 || (bytes[i - 1] as char).is_ascii_whitespace();
        if boundary && bytes[i].is_ascii_digit() {
            let mut j = i;
            while j < bytes.len() && bytes[j].is_ascii_digit() && j - i < 3 {
                j += 1;
            }
            let followed = j < bytes.len()
                && (bytes[j] == b'.' || bytes[j] == b')')
                && (j + 1 == bytes.len() || (bytes[j + 1] as char).is_ascii_whitespace());
            if followed {
                let n: u32 = body[i..j].parse().unwrap_or(0);
                if n == expected && delim.is_none_or(|d| d == bytes[j]) {
                    delim = Some(bytes[j]);
                    out.push((i, j + 1));
                    expected += 1;
                    i = j + 1;
                    continue;
                }
            }
        }
        i += 1;
    }
    out
}

fn numbered_list(body: &str) -> Option<Vec<String>> {
    let body = body.trim();
    let markers = numbered_markers(body);
    if markers.first().map(|m| m.0) != Some(0) {
        return None;
    }
    let items = markers.iter().enumerate().map(|(k, &(_, end))| {
        let next = markers.get(k + 1).map(|m| m.0).unwrap_or(body.len());
        &body[end..next]
    });
    Some(finish_items(items))
}

fn bullet_marker(line: &str) -> Option<&str> {
    let t = line.trim_start();
    ["- ", "* ", "+ ", "· "].iter().find_map(|m| t.strip_prefix(m))
}

fn bullet_list(body: &str) -> Option<Vec<String>> {
    let body = body.trim();
    if body.starts_with('•') {
        return Some(finish_items(body.split('•')));
    }
    bullet_marker(body.lines().next()?)?;
    let mut items: Vec<String> = Vec::new();
    for line in body.lines() {
        if let Some(rest) = bullet_marker(line) {
            items.push(rest.trim().to_string());
        } else if let Some(last) = items.last_mut() {
            if !line.trim().is_empty() {
                last.push(' ');
                last.push_str(line.trim());
            }
        }
    }
    Some(finish_items(items.iter().map(String::as_str)))
}

/// `"a", "b"` style line: two or more double-quoted strings separated by
/// commas and nothing else.
fn quoted_sequence(line: &str) -> Option<Vec<&str>> {
    let mut rest = line.trim();
    let mut items = Vec::new();
    while !rest.is_empty() {
        let body = rest.strip_prefix('"')?;
        let end = body.find('"')?;
        items.push(&body[..end]);
        rest = body[end + 1..].trim_start();
        if let Some(r) = rest.strip_prefix(',') {
            rest = r.trim_start();
        } else if !rest.is_empty() {
            return None;
        }
    }
    (items.len() >= 2).then_some(items)
}

fn line_list(body: &str) -> Vec<String> {
    let mut items = Vec::new();
    for line in body.lines() {
        match quoted_sequence(line) {
            Some(parts) => items.extend(parts),
            None => items.push(line),
        }
    }
    finish_items(items)
}

/// Recover spans from unstructured text. Text that starts with `{` or `[`
/// is left to the structural stages.
pub fn extract_prose(
    text: &str,
    config: &RepairConfig,
) -> Result<(DetectorVerdict, Vec<RepairNote>), NoListFound> {
    let text = text.trim();
    if text.is_empty() || text.starts_with(['{', '[']) {
        return Err(NoListFound);
    }
    let mut notes = Vec::new();
    let (preamble, body) = split_preamble(text, config);
    if let Some(p) = preamble {
        notes.push(RepairNote::StrippedPreamble { preamble: p.to_string() });
    }
    let done = |spans: Vec<String>, mut notes: Vec<RepairNote>, note| {
        notes.push(note);
        Ok((DetectorVerdict { spans }, notes))
    };
    if let Some(items) = numbered_list(body).filter(|i| !i.is_empty()) {
        return done(items, notes, RepairNote::NumberedList);
    }
    if let Some(items) = bullet_list(body).filter(|i| !i.is_empty()) {
        return done(items, notes, RepairNote::BulletList);
    }
    let lower = text.to_lowercase();
    if let Some(phrase) = config.no_hallucination_phrases.iter().find(|p| lower.contains(p.as_str())) {
        notes.push(RepairNote::NoHallucinationPhrase { phrase: phrase.clone() });
        return Ok((DetectorVerdict::empty(), notes));
    }
    let body_word = strip_emphasis(body).trim_end_matches('.').to_lowercase();
    if preamble.is_some() && matches!(body_word.as_str(), "none" | "n/a" | "nothing") {
        notes.push(RepairNote::NoHallucinationPhrase { phrase: body_word });
        return Ok((DetectorVerdict::empty(), notes));
    }
    let lines = line_list(body);
    let needed = if preamble.is_some() { 1 } else { 2 };
    if lines.len() >= needed {
        return done(lines, notes, RepairNote::LineList);
    }
    Err(NoListFound)
}

// ---------------------------------------------------------------------------
// Pipeline

pub fn repair(text: &str) -> RepairOutcome {
    repair_with_config(text, &RepairConfig::default())
}

pub fn repair_with_config(text: &str, config: &RepairConfig) -> RepairOutcome {
    if let Ok(v) = parse_strict(text) {
        return RepairOutcome::found(v, RepairMethod::Strict, Vec::new());
    }
    let syn = syntactic(text);
    if syn.changed {
        if let Ok(v) = parse_strict(&syn.text) {
            return RepairOutcome::found(v, RepairMethod::Syntactic, syn.notes);
        }
    }
    if let Ok(value) = serde_json::from_str::<Value>(&syn.text) {
        let usable = match &value {
            Value::Object(_) => true,
            Value::Array(_) => !syn.leading_trimmed,
            _ => false,
        };
        if usable {
            if let Some((v, notes)) = extract_typed(&value) {
                let mut trace = syn.notes.clone();
                trace.extend(notes);
                return RepairOutcome::found(v, RepairMethod::TypedExtraction, trace);
            }
        }
    }
    match extract_prose(text, config) {
        Ok((v, notes)) => RepairOutcome::found(v, RepairMethod::ProseExtraction, notes),
        Err(NoListFound) => RepairOutcome { verdict: None, method: RepairMethod::NeedsLlm, trace: syn.notes },
    }
}

/// Read the reply to the JSON-fix prompt: a strict parse, also tried on the
/// body of a fenced code block.
pub fn accept_llm_fix(reply: &str) -> Option<DetectorVerdict> {
    parse_strict(reply.trim())
        .ok()
        .or_else(|| strip_code_fence(reply).and_then(|b| parse_strict(b.trim()).ok()))
}
