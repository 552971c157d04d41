//! Per-run provenance record: what ran, with which settings, and digests of
//! everything it wrote.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use halludet_core::prompts::TEMPLATE_VERSIONS;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateVersion {
    pub name: String,
    pub version: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: u32,
    pub command: String,
    pub args: Vec<String>,
    /// Effective configuration after every override was applied.
    pub config: Option<serde_json::Value>,
    pub seed: Option<u64>,
    pub templates: Vec<TemplateVersion>,
    /// Role → sha256 of the backend identity and model name.
    pub endpoints: BTreeMap<String, String>,
    pub started_ms: u64,
    pub finished_ms: u64,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub outputs: Vec<OutputDigest>,
}

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(path: &Path) -> io::Result<OutputDigest> {
    let bytes = fs::read(path)?;
    Ok(OutputDigest { path: path.display().to_string(), bytes: bytes.len() as u64, sha256: sha256_hex(&bytes) })
}

pub fn template_versions() -> Vec<TemplateVersion> {
    TEMPLATE_VERSIONS
        .iter()
        .map(|(name, version, text)| TemplateVersion {
            name: name.to_string(),
            version: version.to_string(),
            sha256: sha256_hex(text.as_bytes()),
        })
        .collect()
}

pub fn endpoint_hash(identity: &str, model: &str) -> String {
    sha256_hex(format!("{identity}|{model}").as_bytes())
}

impl RunManifest {
    pub fn start(command: &str, args: Vec<String>) -> Self {
        let now = now_ms();
        Self {
            schema: MANIFEST_SCHEMA,
            command: command.to_string(),
            args,
            config: None,
            seed: None,
            templates: template_versions(),
            endpoints: BTreeMap::new(),
            started_ms: now,
            finished_ms: now,
            status: RunStatus::Ok,
            failure: None,
            outputs: Vec::new(),
        }
    }

    /// Adds digests for every output that exists; missing files are skipped.
    pub fn add_outputs<'a>(&mut self, paths: impl IntoIterator<Item = &'a Path>) {
        for p in paths {
            if let Ok(d) = digest_file(p) {
                self.outputs.push(d);
            }
        }
    }

    pub fn fail(&mut self, cause: impl Into<String>) {
        self.status = RunStatus::Failed;
        self.failure = Some(cause.into());
    }

    pub fn write(&mut self, path: &Path) -> io::Result<()> {
        self.finished_ms = now_ms();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)
    }
}
