//! Line-delimited corpus readers and writers: MuSiQue samples and the
//! two-file RAGTruth layout.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use halludet_core::corpus::{check_span, DecompositionStep};
use halludet_core::{GoldSpan, Paragraph, QASample, RagTruthCase, TaskType};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Non-fatal problem with one input record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub file: String,
    /// 1-based line number.
    pub line: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<String>,
    pub message: String,
}

impl Diagnostic {
    fn new(file: &str, line: usize, record: Option<&str>, message: impl Into<String>) -> Self {
        Self { file: file.to_string(), line, record: record.map(str::to_string), message: message.into() }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("diagnostic serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Loaded<T> {
    pub items: Vec<T>,
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, thiserror::Error)]
#[error("cannot read {}: {source}", path.display())]
pub struct LoadError {
    pub path: PathBuf,
    #[source]
    pub source: io::Error,
}

fn open(path: &Path) -> Result<BufReader<File>, LoadError> {
    File::open(path).map(BufReader::new).map_err(|source| LoadError { path: path.to_path_buf(), source })
}

fn lines<R: BufRead>(reader: R, path: &Path) -> Result<Vec<(usize, String)>, LoadError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| LoadError { path: path.to_path_buf(), source })?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct RawParagraph {
    idx: u32,
    #[serde(default)]
    title: String,
    paragraph_text: String,
    #[serde(default)]
    is_supporting: bool,
}

#[derive(Serialize, Deserialize)]
struct RawStep {
    question: String,
    answer: String,
}

#[derive(Serialize, Deserialize)]
struct RawMusique {
    id: String,
    question: String,
    paragraphs: Vec<RawParagraph>,
    #[serde(default)]
    question_decomposition: Vec<RawStep>,
    #[serde(default)]
    answer: String,
    #[serde(default = "yes")]
    answerable: bool,
}

fn yes() -> bool {
    true
}

impl From<RawMusique> for QASample {
    fn from(r: RawMusique) -> Self {
        QASample {
            id: r.id,
            question: r.question,
            paragraphs: r
                .paragraphs
                .into_iter()
                .map(|p| Paragraph { idx: p.idx, title: p.title, text: p.paragraph_text, is_supporting: p.is_supporting })
                .collect(),
            answer: r.answer,
            decomposition: r
                .question_decomposition
                .into_iter()
                .map(|s| DecompositionStep { question: s.question, answer: s.answer })
                .collect(),
            answerable: r.answerable,
        }
    }
}

impl From<&QASample> for RawMusique {
    fn from(s: &QASample) -> Self {
        RawMusique {
            id: s.id.clone(),
            question: s.question.clone(),
            paragraphs: s
                .paragraphs
                .iter()
                .map(|p| RawParagraph {
                    idx: p.idx,
                    title: p.title.clone(),
                    paragraph_text: p.text.clone(),
                    is_supporting: p.is_supporting,
                })
                .collect(),
            question_decomposition: s
                .decomposition
                .iter()
                .map(|d| RawStep { question: d.question.clone(), answer: d.answer.clone() })
                .collect(),
            answer: s.answer.clone(),
            answerable: s.answerable,
        }
    }
}

/// Reads a MuSiQue JSONL file. Unparseable, invalid and duplicate-id lines
/// are skipped with a diagnostic; the rest keep file order.
pub fn load_musique(path: &Path) -> Result<Loaded<QASample>, LoadError> {
    parse_musique(open(path)?, path)
}

pub fn parse_musique<R: BufRead>(reader: R, path: &Path) -> Result<Loaded<QASample>, LoadError> {
    let name = path.display().to_string();
    let mut items = Vec::new();
    let mut diagnostics = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in lines(reader, path)? {
        let raw: RawMusique = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                diagnostics.push(Diagnostic::new(&name, n, None, format!("malformed record: {e}")));
                continue;
            }
        };
        let sample = QASample::from(raw);
        let problems = sample.violations();
        if !problems.is_empty() {
            let msg = problems.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ");
            diagnostics.push(Diagnostic::new(&name, n, Some(&sample.id), msg));
            continue;
        }
        if !seen.insert(sample.id.clone()) {
            diagnostics.push(Diagnostic::new(&name, n, Some(&sample.id), "duplicate id"));
            continue;
        }
        items.push(sample);
    }
    Ok(Loaded { items, diagnostics })
}

/// Writes samples in the MuSiQue release schema, one per line.
pub fn write_musique<W: Write>(mut out: W, samples: &[QASample]) -> io::Result<()> {
    for s in samples {
        serde_json::to_writer(&mut out, &RawMusique::from(s))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct RawSource {
    source_id: String,
    task_type: String,
    source_info: Value,
}

#[derive(Serialize, Deserialize)]
struct RawLabel {
    start: i64,
    end: i64,
    #[serde(default)]
    label_type: String,
}

#[derive(Deserialize)]
struct RawResponse {
    id: String,
    source_id: String,
    #[serde(default)]
    model: String,
    response: String,
    #[serde(default)]
    labels: Vec<RawLabel>,
    #[serde(default)]
    split: Option<String>,
}

struct Source {
    task_type: TaskType,
    context: String,
    question: String,
}

fn source_fields(task_type: TaskType, info: Value) -> Result<(String, String), String> {
    match (task_type, info) {
        (TaskType::QA, Value::Object(map)) => {
            let question = map.get("question").and_then(Value::as_str).unwrap_or_default().to_string();
            let context = match map.get("passages") {
                Some(Value::String(s)) => s.clone(),
                Some(Value::Array(items)) => {
                    items.iter().map(|v| v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string())).collect::<Vec<_>>().join("\n\n")
                }
                _ => return Err("QA source_info lacks passages".into()),
            };
            Ok((context, question))
        }
        (_, Value::String(s)) => Ok((s, String::new())),
        (TaskType::QA, _) => Err("QA source_info must be an object".into()),
        (_, v @ (Value::Object(_) | Value::Array(_))) => Ok((v.to_string(), String::new())),
        (_, _) => Err("unsupported source_info".into()),
    }
}

/// Reads a RAGTruth `source_info` file and `response` file and joins them
/// on `source_id`. Each response becomes one case.
pub fn load_ragtruth(source_path: &Path, response_path: &Path) -> Result<Loaded<RagTruthCase>, LoadError> {
    let source_name = source_path.display().to_string();
    let response_name = response_path.display().to_string();
    let mut diagnostics = Vec::new();
    let mut sources: HashMap<String, Source> = HashMap::new();
    for (n, line) in lines(open(source_path)?, source_path)? {
        let raw: RawSource = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                diagnostics.push(Diagnostic::new(&source_name, n, None, format!("malformed record: {e}")));
                continue;
            }
        };
        let id = raw.source_id.clone();
        let task_type: TaskType = match raw.task_type.parse() {
            Ok(t) => t,
            Err(e) => {
                diagnostics.push(Diagnostic::new(&source_name, n, Some(&id), format!("{e}")));
                continue;
            }
        };
        let (context, question) = match source_fields(task_type, raw.source_info) {
            Ok(f) => f,
            Err(msg) => {
                diagnostics.push(Diagnostic::new(&source_name, n, Some(&id), msg));
                continue;
            }
        };
        if sources.contains_key(&id) {
            diagnostics.push(Diagnostic::new(&source_name, n, Some(&id), "duplicate source_id"));
            continue;
        }
        sources.insert(id, Source { task_type, context, question });
    }

    let mut items = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in lines(open(response_path)?, response_path)? {
        let raw: RawResponse = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                diagnostics.push(Diagnostic::new(&response_name, n, None, format!("malformed record: {e}")));
                continue;
            }
        };
        let Some(source) = sources.get(&raw.source_id) else {
            diagnostics.push(Diagnostic::new(
                &response_name,
                n,
                Some(&raw.id),
                format!("dangling source_id {}", raw.source_id),
            ));
            continue;
        };
        if !seen.insert(raw.id.clone()) {
            diagnostics.push(Diagnostic::new(&response_name, n, Some(&raw.id), "duplicate response id"));
            continue;
        }
        let chars = raw.response.chars().count();
        let mut gold_spans = Vec::new();
        for label in raw.labels {
            if label.start < 0 || label.end < 0 {
                diagnostics.push(Diagnostic::new(&response_name, n, Some(&raw.id), "span out of range"));
                continue;
            }
            let (start, end) = (label.start as usize, label.end as usize);
            match check_span(start, end, chars) {
                Ok(()) => gold_spans.push(GoldSpan { start, end, label: label.label_type }),
                Err(issue) => diagnostics.push(Diagnostic::new(
                    &response_name,
                    n,
                    Some(&raw.id),
                    format!("{issue} ({start}, {end})"),
                )),
            }
        }
        items.push(RagTruthCase {
            case_id: raw.id,
            task_type: source.task_type,
            context: source.context.clone(),
            question: source.question.clone(),
            response: raw.response,
            gold_spans,
            model_name: raw.model,
            split: raw.split,
        });
    }
    Ok(Loaded { items, diagnostics })
}

/// Writes cases in the two-file layout, one source record per case keyed
/// `src-<case_id>`.
pub fn write_ragtruth<S: Write, R: Write>(mut sources: S, mut responses: R, cases: &[RagTruthCase]) -> io::Result<()> {
    for c in cases {
        let source_id = format!("src-{}", c.case_id);
        let source_info = match c.task_type {
            TaskType::QA => serde_json::json!({ "question": c.question, "passages": c.context }),
            _ => Value::String(c.context.clone()),
        };
        let task_type = match c.task_type {
            TaskType::Data2Txt => "Data2txt",
            t => t.as_str(),
        };
        serde_json::to_writer(
            &mut sources,
            &serde_json::json!({ "source_id": source_id, "task_type": task_type, "source_info": source_info }),
        )?;
        sources.write_all(b"\n")?;
        let labels: Vec<RawLabel> = c
            .gold_spans
            .iter()
            .map(|s| RawLabel { start: s.start as i64, end: s.end as i64, label_type: s.label.clone() })
            .collect();
        let mut record = serde_json::json!({
            "id": c.case_id,
            "source_id": source_id,
            "model": c.model_name,
            "response": c.response,
            "labels": labels,
        });
        if let Some(split) = &c.split {
            record["split"] = Value::String(split.clone());
        }
        serde_json::to_writer(&mut responses, &record)?;
        responses.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn empty_musique_file() {
        let dir = tempfile::tempdir().unwrap();
        let loaded = load_musique(&write(dir.path(), "e.jsonl", "")).unwrap();
        assert!(loaded.items.is_empty());
        assert!(loaded.diagnostics.is_empty());
    }

    #[test]
    fn missing_file_is_fatal() {
        assert!(load_musique(Path::new("/nonexistent/x.jsonl")).is_err());
    }

    #[test]
    fn ragtruth_span_checks() {
        let dir = tempfile::tempdir().unwrap();
        let src = write(dir.path(), "s.jsonl", r#"{"source_id":"1","task_type":"Summary","source_info":"ctx"}"#);
        let resp = write(
            dir.path(),
            "r.jsonl",
            concat!(
                r#"{"id":"a","source_id":"1","model":"m","response":"hello world","labels":[{"start":5,"end":3,"label_type":"x"},{"start":0,"end":5,"label_type":"Evident Conflict"}]}"#,
                "\n",
                r#"{"id":"b","source_id":"9","model":"m","response":"r","labels":[]}"#,
                "\n",
                r#"{"id":"c","source_id":"1","model":"m","response":"fine","labels":[{"start":0,"end":99}]}"#
            ),
        );
        let loaded = load_ragtruth(&src, &resp).unwrap();
        assert_eq!(loaded.items.len(), 2);
        assert_eq!(loaded.items[0].gold_spans.len(), 1);
        assert!(loaded.items[0].is_hallucinated());
        assert!(!loaded.items[1].is_hallucinated());
        let msgs: Vec<_> = loaded.diagnostics.iter().map(|d| d.message.as_str()).collect();
        assert!(msgs[0].starts_with("inverted span"));
        assert!(msgs[1].starts_with("dangling source_id"));
        assert!(msgs[2].starts_with("span out of range"));
    }

    #[test]
    fn data2txt_object_becomes_json_text() {
        let (ctx, q) = source_fields(TaskType::Data2Txt, serde_json::json!({"name": "Cafe"})).unwrap();
        assert_eq!(ctx, r#"{"name":"Cafe"}"#);
        assert!(q.is_empty());
    }
}
