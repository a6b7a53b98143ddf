//! Gateway configuration: TOML file plus environment overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extraction::{RemoteExtractorConfig, PROMPT_EN, PROMPT_ZH};
use crate::sanitizer::Strategy;
use crate::taxonomy::PrivacyLevel;

pub const ENV_EXTRACTOR_ENDPOINT: &str = "VEILGATE_EXTRACTOR_ENDPOINT";
pub const ENV_EXTRACTOR_MODEL: &str = "VEILGATE_EXTRACTOR_MODEL";
pub const ENV_EXTRACTOR_API_KEY: &str = "VEILGATE_EXTRACTOR_API_KEY";
pub const ENV_CLOUD_ENDPOINT: &str = "VEILGATE_CLOUD_ENDPOINT";
pub const ENV_CLOUD_MODEL: &str = "VEILGATE_CLOUD_MODEL";
pub const ENV_CLOUD_API_KEY: &str = "VEILGATE_CLOUD_API_KEY";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractorKind {
    Rules,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptLanguage {
    En,
    Zh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteExtractorSection {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub prompt_language: PromptLanguage,
    /// Replaces the built-in template when set.
    pub prompt_file: Option<PathBuf>,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub max_in_flight: usize,
}

impl Default for RemoteExtractorSection {
    fn default() -> Self {
        let d = RemoteExtractorConfig::default();
        Self {
            endpoint: d.endpoint,
            model: d.model,
            api_key: None,
            prompt_language: PromptLanguage::En,
            prompt_file: None,
            timeout_secs: d.timeout_secs,
            max_retries: d.max_retries,
            backoff_base_ms: d.backoff_base_ms,
            max_in_flight: d.max_in_flight,
        }
    }
}

impl RemoteExtractorSection {
    pub fn to_extractor_config(&self) -> Result<RemoteExtractorConfig, ConfigError> {
        let prompt_template = match &self.prompt_file {
            Some(p) => std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                path: p.clone(),
                source,
            })?,
            None => match self.prompt_language {
                PromptLanguage::En => PROMPT_EN.to_string(),
                PromptLanguage::Zh => PROMPT_ZH.to_string(),
            },
        };
        let c = RemoteExtractorConfig {
            endpoint: self.endpoint.clone(),
            model: self.model.clone(),
            api_key: self.api_key.clone(),
            prompt_template,
            timeout_secs: self.timeout_secs,
            max_retries: self.max_retries,
            backoff_base_ms: self.backoff_base_ms,
            max_in_flight: self.max_in_flight,
        };
        c.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CloudKind {
    /// Returns the latest sanitized message unchanged.
    Echo,
    /// Deterministic in-process memory agent.
    Mock,
    /// Chat-completion endpoint.
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CloudSection {
    pub kind: CloudKind,
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout_secs: f64,
    pub max_retries: u32,
}

impl Default for CloudSection {
    fn default() -> Self {
        Self {
            kind: CloudKind::Echo,
            endpoint: "http://127.0.0.1:8001/v1/chat/completions".into(),
            model: "assistant".into(),
            api_key: None,
            timeout_secs: 60.0,
            max_retries: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub strategy: Strategy,
    pub mask_level: PrivacyLevel,
    pub extractor: ExtractorKind,
    /// Directory of the mapping store; `None` keeps mappings in memory only.
    pub store_path: Option<PathBuf>,
    pub bind: String,
    /// Worker threads for batch runs.
    pub workers: usize,
    pub remote_extractor: RemoteExtractorSection,
    pub cloud: CloudSection,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::TypedReversible,
            mask_level: PrivacyLevel::PL2,
            extractor: ExtractorKind::Rules,
            store_path: Some(PathBuf::from("veilgate-store")),
            bind: "127.0.0.1:8787".into(),
            workers: 4,
            remote_extractor: RemoteExtractorSection::default(),
            cloud: CloudSection::default(),
        }
    }
}

impl GatewayConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let c: Self = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Reads `path` (or defaults when `None`) and applies environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut c = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                    path: p.to_path_buf(),
                    source,
                })?;
                toml::from_str(&text)?
            }
            None => Self::default(),
        };
        c.apply_env(|k| std::env::var(k).ok());
        c.validate()?;
        Ok(c)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) {
        let set = |slot: &mut String, key: &str| {
            if let Some(v) = get(key).filter(|v| !v.is_empty()) {
                *slot = v;
            }
        };
        set(&mut self.remote_extractor.endpoint, ENV_EXTRACTOR_ENDPOINT);
        set(&mut self.remote_extractor.model, ENV_EXTRACTOR_MODEL);
        set(&mut self.cloud.endpoint, ENV_CLOUD_ENDPOINT);
        set(&mut self.cloud.model, ENV_CLOUD_MODEL);
        if let Some(v) = get(ENV_EXTRACTOR_API_KEY).filter(|v| !v.is_empty()) {
            self.remote_extractor.api_key = Some(v);
        }
        if let Some(v) = get(ENV_CLOUD_API_KEY).filter(|v| !v.is_empty()) {
            self.cloud.api_key = Some(v);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.mask_level.is_extractable() {
            return Err(ConfigError::Invalid("mask_level must be PL2, PL3 or PL4".into()));
        }
        if self.workers == 0 {
            return Err(ConfigError::Invalid("workers must be at least 1".into()));
        }
        if !(self.cloud.timeout_secs.is_finite() && self.cloud.timeout_secs > 0.0) {
            return Err(ConfigError::Invalid("cloud.timeout_secs must be > 0".into()));
        }
        if self.extractor == ExtractorKind::Remote {
            self.remote_extractor.to_extractor_config()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_full_file() {
        let c = GatewayConfig::from_toml(
            r#"
strategy = "untyped"
mask_level = "pl3"
extractor = "rules"
bind = "0.0.0.0:9000"

[cloud]
kind = "mock"
"#,
        )
        .unwrap();
        assert_eq!(c.strategy, Strategy::UntypedPlaceholder);
        assert_eq!(c.mask_level, PrivacyLevel::PL3);
        assert_eq!(c.cloud.kind, CloudKind::Mock);
        assert_eq!(c.workers, 4);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(GatewayConfig::from_toml("mask_level = \"PL1\"").is_err());
        assert!(GatewayConfig::from_toml("strategy = \"masked\"").is_err());
        assert!(GatewayConfig::from_toml("surprise = 1").is_err());
        assert!(GatewayConfig::from_toml("workers = 0").is_err());
    }

    #[test]
    fn env_overrides() {
        let mut c = GatewayConfig::default();
        c.apply_env(|k| match k {
            ENV_CLOUD_ENDPOINT => Some("https://cloud.example/v1/chat/completions".into()),
            ENV_EXTRACTOR_API_KEY => Some("secret".into()),
            ENV_CLOUD_MODEL => Some(String::new()),
            _ => None,
        });
        assert_eq!(c.cloud.endpoint, "https://cloud.example/v1/chat/completions");
        assert_eq!(c.cloud.model, "assistant");
        assert_eq!(c.remote_extractor.api_key.as_deref(), Some("secret"));
    }

    #[test]
    fn remote_prompt_selection() {
        let s = RemoteExtractorSection {
            prompt_language: PromptLanguage::Zh,
            ..Default::default()
        };
        assert!(s.to_extractor_config().unwrap().prompt_template.contains("验证码"));
    }
}
