use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{BackendReply, TransportError};

const CONTENT_LIMIT: usize = 512;

/// One line per transport attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub request_hash: String,
    pub attempt: u32,
    pub timestamp_ms: u64,
    pub latency_ms: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub outcome: String,
    /// Reply text, cut to a bounded number of characters.
    pub content: String,
}

impl AuditEntry {
    pub fn new(
        request_hash: &str,
        attempt: u32,
        latency: Duration,
        result: &Result<BackendReply, TransportError>,
    ) -> Self {
        let timestamp_ms = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0);
        let (outcome, content, prompt_tokens, completion_tokens) = match result {
            Ok(r) => ("ok".to_string(), truncate(&r.content), r.prompt_tokens, r.completion_tokens),
            Err(e) => (e.to_string(), String::new(), 0, 0),
        };
        Self {
            request_hash: request_hash.to_string(),
            attempt,
            timestamp_ms,
            latency_ms: latency.as_millis() as u64,
            prompt_tokens,
            completion_tokens,
            outcome,
            content,
        }
    }
}

fn truncate(s: &str) -> String {
    match s.char_indices().nth(CONTENT_LIMIT) {
        Some((i, _)) => s[..i].to_string(),
        None => s.to_string(),
    }
}

/// Append-only JSONL audit trail.
pub struct AuditLog {
    out: Mutex<BufWriter<File>>,
}

impl AuditLog {
    pub fn append(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { out: Mutex::new(BufWriter::new(file)) })
    }

    pub fn record(&self, entry: AuditEntry) {
        let mut out = self.out.lock().unwrap();
        if let Ok(line) = serde_json::to_string(&entry) {
            let _ = writeln!(out, "{line}");
            let _ = out.flush();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncates_long_content() {
        let long = "é".repeat(CONTENT_LIMIT + 10);
        let e = AuditEntry::new("h", 1, Duration::from_millis(5), &Ok(BackendReply::text(long)));
        assert_eq!(e.content.chars().count(), CONTENT_LIMIT);
        assert_eq!(e.latency_ms, 5);
    }
}
