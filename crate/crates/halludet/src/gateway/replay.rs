//! Record real replies to JSONL and serve them back keyed by request
//! fingerprint.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{BackendReply, ChatBackend, ChatRequest, TransportError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub key: String,
    pub model: String,
    pub content: String,
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
}

pub struct ReplayBackend {
    entries: HashMap<String, ReplayEntry>,
}

impl ReplayBackend {
    pub fn load(path: &Path) -> io::Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut entries = HashMap::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ReplayEntry = serde_json::from_str(&line).map_err(|e| {
                io::Error::new(io::ErrorKind::InvalidData, format!("{}:{}: {e}", path.display(), n + 1))
            })?;
            entries.entry(entry.key.clone()).or_insert(entry);
        }
        Ok(Self { entries })
    }

    pub fn from_entries(entries: impl IntoIterator<Item = ReplayEntry>) -> Self {
        let mut map = HashMap::new();
        for e in entries {
            map.entry(e.key.clone()).or_insert(e);
        }
        Self { entries: map }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl ChatBackend for ReplayBackend {
    fn send(&self, request: &ChatRequest) -> Result<BackendReply, TransportError> {
        let key = request.fingerprint();
        match self.entries.get(&key) {
            Some(e) => Ok(BackendReply {
                content: e.content.clone(),
                prompt_tokens: e.prompt_tokens,
                completion_tokens: e.completion_tokens,
            }),
            None => Err(TransportError::ReplayMiss { key }),
        }
    }

    fn identity(&self) -> String {
        "replay".into()
    }
}

/// Wraps a backend and appends every successful reply to a replay file.
pub struct RecordingBackend<B> {
    inner: B,
    out: Mutex<BufWriter<File>>,
}

impl<B: ChatBackend> RecordingBackend<B> {
    pub fn new(inner: B, path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { inner, out: Mutex::new(BufWriter::new(file)) })
    }
}

impl<B: ChatBackend> ChatBackend for RecordingBackend<B> {
    fn send(&self, request: &ChatRequest) -> Result<BackendReply, TransportError> {
        let reply = self.inner.send(request)?;
        let entry = ReplayEntry {
            key: request.fingerprint(),
            model: request.model.clone(),
            content: reply.content.clone(),
            prompt_tokens: reply.prompt_tokens,
            completion_tokens: reply.completion_tokens,
        };
        let mut out = self.out.lock().unwrap();
        let line = serde_json::to_string(&entry).map_err(|e| TransportError::Decode(e.to_string()))?;
        writeln!(out, "{line}").and_then(|_| out.flush()).map_err(|e| TransportError::Connection(e.to_string()))?;
        Ok(reply)
    }

    fn identity(&self) -> String {
        self.inner.identity()
    }
}

#[cfg(test)]
mod tests {
    use super::super::ScriptedBackend;
    use super::*;
    use halludet_core::PromptText;

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let req = ChatRequest::from_prompt("m", &PromptText { system: None, user: "q".into() }, 0.0, 8);
        let rec = RecordingBackend::new(ScriptedBackend::always("answer"), &path).unwrap();
        assert_eq!(rec.send(&req).unwrap().content, "answer");
        drop(rec);
        let replay = ReplayBackend::load(&path).unwrap();
        assert_eq!(replay.send(&req).unwrap().content, "answer");
        let other = req.clone().with_variant(1);
        assert!(matches!(replay.send(&other), Err(TransportError::ReplayMiss { .. })));
        assert!(!TransportError::ReplayMiss { key: String::new() }.is_retryable());
    }
}
