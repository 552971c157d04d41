//! TOML run configuration. Command-line flags override file values, file
//! values override environment defaults, and credentials only ever come
//! from the environment.

use std::path::Path;
use std::time::Duration;

use halludet_core::retry::RetryPolicy;
use serde::{Deserialize, Serialize};

pub const ENV_BASE_URL: &str = "HALLUDET_BASE_URL";
pub const ENV_MODEL: &str = "HALLUDET_MODEL";
pub const DEFAULT_API_KEY_ENV: &str = "HALLUDET_API_KEY";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub generator: EndpointConfig,
    pub detector: EndpointConfig,
    /// Falls back to the detector endpoint when unset.
    pub fixer: Option<EndpointConfig>,
    pub temperatures: Temperatures,
    pub retry: RetryPolicy,
    pub perturb: PerturbSettings,
    pub eval: EvalSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: Option<String>,
    pub model: Option<String>,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_output_tokens: u32,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: None,
            model: None,
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
            timeout_secs: 120,
            max_output_tokens: 1024,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Temperatures {
    pub generation: f64,
    pub detection: f64,
    pub json_fix: f64,
}

impl Default for Temperatures {
    fn default() -> Self {
        Self { generation: 0.7, detection: 0.0, json_fix: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbSettings {
    pub seed: u64,
    pub p_halu: f64,
    /// Generation attempts per sample.
    pub budget: u32,
    pub max_in_flight: usize,
    /// Runs rejecting a larger share of eligible samples are failed.
    pub reject_fraction_limit: f64,
    pub include_unanswerable: bool,
}

impl Default for PerturbSettings {
    fn default() -> Self {
        Self { seed: 0, p_halu: 0.5, budget: 3, max_in_flight: 4, reject_fraction_limit: 0.2, include_unanswerable: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub allow_llm_fix: bool,
    pub max_in_flight: usize,
    pub failure_policy: crate::evaluator::FailurePolicy,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { allow_llm_fix: true, max_in_flight: 4, failure_policy: Default::default() }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("invalid config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("{role} endpoint has no {field}; set it in the config file, by flag, or via {env}")]
    Missing { role: &'static str, field: &'static str, env: &'static str },
    #[error("{0}")]
    Invalid(String),
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        Self::parse(&text).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse { path: path.display().to_string(), message },
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: Config =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: String::new(), message: e.to_string() })?;
        config.check()?;
        Ok(config)
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        let p = &self.perturb;
        if !(0.0..=1.0).contains(&p.p_halu) {
            return Err(ConfigError::Invalid("perturb.p_halu must lie in [0, 1]".into()));
        }
        if p.budget == 0 {
            return Err(ConfigError::Invalid("perturb.budget must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&p.reject_fraction_limit) {
            return Err(ConfigError::Invalid("perturb.reject_fraction_limit must lie in [0, 1]".into()));
        }
        for (name, t) in [
            ("generation", self.temperatures.generation),
            ("detection", self.temperatures.detection),
            ("json_fix", self.temperatures.json_fix),
        ] {
            if !(0.0..=2.0).contains(&t) {
                return Err(ConfigError::Invalid(format!("temperatures.{name} must lie in [0, 2]")));
            }
        }
        if self.retry.max_attempts == 0 {
            return Err(ConfigError::Invalid("retry.max_attempts must be at least 1".into()));
        }
        Ok(())
    }

    pub fn fixer(&self) -> &EndpointConfig {
        self.fixer.as_ref().unwrap_or(&self.detector)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Endpoint settings after applying every precedence layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedEndpoint {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub max_output_tokens: u32,
}

impl EndpointConfig {
    /// Fills unset fields from `env` and reads the credential.
    pub fn resolve(&self, role: &'static str, env: impl Fn(&str) -> Option<String>) -> Result<ResolvedEndpoint, ConfigError> {
        let base_url = self
            .base_url
            .clone()
            .or_else(|| env(ENV_BASE_URL))
            .ok_or(ConfigError::Missing { role, field: "base_url", env: ENV_BASE_URL })?;
        let model = self.resolve_model(role, &env)?;
        Ok(ResolvedEndpoint {
            base_url,
            model,
            api_key: env(&self.api_key_env).filter(|k| !k.is_empty()),
            timeout: Duration::from_secs(self.timeout_secs.max(1)),
            max_output_tokens: self.max_output_tokens,
        })
    }

    pub fn resolve_model(&self, role: &'static str, env: impl Fn(&str) -> Option<String>) -> Result<String, ConfigError> {
        self.model.clone().or_else(|| env(ENV_MODEL)).ok_or(ConfigError::Missing { role, field: "model", env: ENV_MODEL })
    }
}

pub fn process_env(name: &str) -> Option<String> {
    std::env::var(name).ok()
}
