//! Domain types for multi-hop QA samples and RAGTruth-style benchmark
//! cases, plus the context-length statistics computed over them.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::tokenize::Tokenizer;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Paragraph {
    pub idx: u32,
    pub title: String,
    pub text: String,
    pub is_supporting: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecompositionStep {
    pub question: String,
    pub answer: String,
}

/// One multi-hop question with its paragraphs and gold answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QASample {
    pub id: String,
    pub question: String,
    pub paragraphs: Vec<Paragraph>,
    pub answer: String,
    pub decomposition: Vec<DecompositionStep>,
    pub answerable: bool,
}

/// A broken [`QASample`] invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SampleViolation {
    EmptyId,
    MissingAnswer,
    TooFewHops(usize),
    DuplicateParagraphIdx(u32),
    EmptyParagraphText(u32),
}

impl fmt::Display for SampleViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyId => f.write_str("empty id"),
            Self::MissingAnswer => f.write_str("answerable sample has empty answer"),
            Self::TooFewHops(n) => write!(f, "decomposition has {n} steps, need at least 2"),
            Self::DuplicateParagraphIdx(i) => write!(f, "duplicate paragraph idx {i}"),
            Self::EmptyParagraphText(i) => write!(f, "paragraph {i} has empty text"),
        }
    }
}

impl QASample {
    /// Every per-sample invariant this sample breaks. Id uniqueness is a
    /// corpus-level property and is checked by the loaders.
    pub fn violations(&self) -> Vec<SampleViolation> {
        let mut out = Vec::new();
        if self.id.trim().is_empty() {
            out.push(SampleViolation::EmptyId);
        }
        if self.answerable && self.answer.trim().is_empty() {
            out.push(SampleViolation::MissingAnswer);
        }
        if self.decomposition.len() < 2 {
            out.push(SampleViolation::TooFewHops(self.decomposition.len()));
        }
        let mut seen = BTreeSet::new();
        for p in &self.paragraphs {
            if !seen.insert(p.idx) {
                out.push(SampleViolation::DuplicateParagraphIdx(p.idx));
            }
            if p.text.trim().is_empty() {
                out.push(SampleViolation::EmptyParagraphText(p.idx));
            }
        }
        out
    }

    /// Paragraphs in input order, each as its title line followed by its
    /// text, separated by blank lines.
    pub fn evidence_text(&self) -> String {
        let mut out = String::new();
        for (i, p) in self.paragraphs.iter().enumerate() {
            if i > 0 {
                out.push_str("\n\n");
            }
            if !p.title.is_empty() {
                out.push_str(&p.title);
                out.push('\n');
            }
            out.push_str(&p.text);
        }
        out
    }

    pub fn hops(&self) -> usize {
        self.decomposition.len()
    }
}

/// Token count of all paragraph titles and texts. The question is not
/// counted.
pub fn context_tokens<T: Tokenizer + ?Sized>(sample: &QASample, tokenizer: &T) -> usize {
    sample
        .paragraphs
        .iter()
        .map(|p| tokenizer.count(&p.title) + tokenizer.count(&p.text))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskType {
    QA,
    Summary,
    Data2Txt,
}

impl TaskType {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskType::QA => "QA",
            TaskType::Summary => "Summary",
            TaskType::Data2Txt => "Data2Txt",
        }
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for TaskType {
    type Err = UnknownTaskType;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "qa" => Ok(TaskType::QA),
            "summary" => Ok(TaskType::Summary),
            "data2txt" | "data2text" => Ok(TaskType::Data2Txt),
            _ => Err(UnknownTaskType(s.into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown task type {0:?}")]
pub struct UnknownTaskType(pub String);

/// Annotated hallucination span, in Unicode scalar-value offsets into the
/// response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldSpan {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpanIssue {
    Inverted,
    OutOfRange,
}

impl fmt::Display for SpanIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpanIssue::Inverted => "inverted span",
            SpanIssue::OutOfRange => "span out of range",
        })
    }
}

/// Check `0 <= start < end <= response_chars`.
pub fn check_span(start: usize, end: usize, response_chars: usize) -> Result<(), SpanIssue> {
    if start >= end {
        Err(SpanIssue::Inverted)
    } else if end > response_chars {
        Err(SpanIssue::OutOfRange)
    } else {
        Ok(())
    }
}

/// One benchmark item: source context, a model response and its
/// annotated hallucination spans.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RagTruthCase {
    pub case_id: String,
    pub task_type: TaskType,
    pub context: String,
    /// Empty for task types without a question.
    pub question: String,
    pub response: String,
    pub gold_spans: Vec<GoldSpan>,
    pub model_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

impl RagTruthCase {
    pub fn is_hallucinated(&self) -> bool {
        !self.gold_spans.is_empty()
    }

    /// Text covered by a gold span.
    pub fn span_text(&self, span: &GoldSpan) -> String {
        self.response
            .chars()
            .skip(span.start)
            .take(span.end.saturating_sub(span.start))
            .collect()
    }
}

/// One histogram bucket covering `[lower, upper)` tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bucket {
    pub lower: usize,
    pub upper: usize,
    pub count: usize,
}

/// Histogram and summary statistics of per-sample context lengths.
///
/// `mean`, `median`, `min` and `max` are `None` for an empty input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthDistribution {
    pub bucket_width: usize,
    pub samples: usize,
    pub histogram: Vec<Bucket>,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub min: Option<usize>,
    pub max: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("bucket width must be positive")]
pub struct ZeroBucketWidth;

impl LengthDistribution {
    /// Build from raw per-sample token counts.
    pub fn from_lengths(lengths: &[usize], bucket_width: usize) -> Result<Self, ZeroBucketWidth> {
        if bucket_width == 0 {
            return Err(ZeroBucketWidth);
        }
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for &len in lengths {
            *counts.entry(len / bucket_width).or_default() += 1;
        }
        let histogram = counts
            .into_iter()
            .map(|(b, count)| Bucket {
                lower: b * bucket_width,
                upper: (b + 1) * bucket_width,
                count,
            })
            .collect();

        let n = lengths.len();
        let (mean, median, min, max) = if n == 0 {
            (None, None, None, None)
        } else {
            let total: u128 = lengths.iter().map(|&l| l as u128).sum();
            let mut sorted = lengths.to_vec();
            sorted.sort_unstable();
            let median = if n % 2 == 1 {
                sorted[n / 2] as f64
            } else {
                (sorted[n / 2 - 1] as f64 + sorted[n / 2] as f64) / 2.0
            };
            (
                Some(total as f64 / n as f64),
                Some(median),
                sorted.first().copied(),
                sorted.last().copied(),
            )
        };

        Ok(Self {
            bucket_width,
            samples: n,
            histogram,
            mean,
            median,
            min,
            max,
        })
    }
}

/// Context-length distribution of a corpus.
pub fn distribution<T: Tokenizer + ?Sized>(
    samples: &[QASample],
    tokenizer: &T,
    bucket_width: usize,
) -> Result<LengthDistribution, ZeroBucketWidth> {
    let lengths: Vec<usize> = samples.iter().map(|s| context_tokens(s, tokenizer)).collect();
    LengthDistribution::from_lengths(&lengths, bucket_width)
}

/// Shape of a multi-hop corpus: hop counts and paragraph counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub samples: usize,
    pub answerable: usize,
    /// Decomposition length → number of samples.
    pub hops: BTreeMap<usize, usize>,
    pub mean_paragraphs: Option<f64>,
}

impl CorpusSummary {
    pub fn of(samples: &[QASample]) -> Self {
        let mut hops = BTreeMap::new();
        for s in samples {
            *hops.entry(s.hops()).or_default() += 1;
        }
        let paragraphs: usize = samples.iter().map(|s| s.paragraphs.len()).sum();
        Self {
            samples: samples.len(),
            answerable: samples.iter().filter(|s| s.answerable).count(),
            hops,
            mean_paragraphs: (!samples.is_empty())
                .then(|| paragraphs as f64 / samples.len() as f64),
        }
    }
}
