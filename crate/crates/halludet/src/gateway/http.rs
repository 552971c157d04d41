//! OpenAI-compatible `/chat/completions` client.

use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

use super::{BackendReply, ChatBackend, ChatRequest, TransportError};

#[derive(Debug, Clone)]
pub struct HttpConfig {
    /// Base URL up to and including the API version, e.g. `https://host/v1`.
    pub base_url: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

pub struct HttpBackend {
    client: Client,
    config: HttpConfig,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, TransportError> {
        let client = Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| TransportError::Connection(e.to_string()))?;
        Ok(Self { client, config })
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }
}

impl ChatBackend for HttpBackend {
    fn send(&self, request: &ChatRequest) -> Result<BackendReply, TransportError> {
        let body = json!({
            "model": request.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        let mut builder = self.client.post(self.url()).json(&body);
        if let Some(key) = &self.config.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder.send().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Connection(e.to_string())
            }
        })?;
        let status = resp.status();
        let retry_after = resp
            .headers()
            .get(reqwest::header::RETRY_AFTER)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let text = resp.text().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Connection(e.to_string())
            }
        })?;
        if !status.is_success() {
            return Err(classify_status(status, retry_after, text));
        }
        decode_reply(&text)
    }

    fn identity(&self) -> String {
        format!("http {}", self.config.base_url.trim_end_matches('/'))
    }
}

fn classify_status(status: StatusCode, retry_after: Option<Duration>, body: String) -> TransportError {
    let code = status.as_u16();
    match code {
        429 => TransportError::RateLimited { retry_after },
        408 => TransportError::Timeout,
        401 | 403 => TransportError::Auth { status: code },
        500..=599 => TransportError::Server { status: code, body },
        _ => TransportError::BadRequest { status: code, body },
    }
}

fn decode_reply(text: &str) -> Result<BackendReply, TransportError> {
    let v: Value = serde_json::from_str(text).map_err(|e| TransportError::Decode(e.to_string()))?;
    let content = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| TransportError::Decode("missing choices[0].message.content".into()))?
        .to_string();
    let prompt_tokens = v.pointer("/usage/prompt_tokens").and_then(Value::as_u64).unwrap_or(0);
    let completion_tokens = v
        .pointer("/usage/completion_tokens")
        .and_then(Value::as_u64)
        .unwrap_or_else(|| content.split_whitespace().count() as u64);
    Ok(BackendReply { content, prompt_tokens, completion_tokens })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_openai_shape() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"hi there"}}],"usage":{"prompt_tokens":5,"completion_tokens":2}}"#;
        let r = decode_reply(body).unwrap();
        assert_eq!(r.content, "hi there");
        assert_eq!((r.prompt_tokens, r.completion_tokens), (5, 2));
        assert!(matches!(decode_reply("{}"), Err(TransportError::Decode(_))));
    }

    #[test]
    fn status_mapping() {
        let s = |c| classify_status(StatusCode::from_u16(c).unwrap(), None, String::new());
        assert!(s(429).is_retryable());
        assert!(s(503).is_retryable());
        assert!(!s(401).is_retryable());
        assert!(!s(400).is_retryable());
    }
}
