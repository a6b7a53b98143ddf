//! Chat-completion client and the remote LLM extractor built on it.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{parse_extraction_output, retain_substrings, ExtractError, Extractor};
use crate::corpus::PrivacyItem;

pub const PROMPT_EN: &str = include_str!("../../prompts/extract_en.txt");
pub const PROMPT_ZH: &str = include_str!("../../prompts/extract_zh.txt");

pub const REAL_NAME_SLOT: &str = "{real_name}";
const UNKNOWN_NAME: &str = "unknown";
const MAX_BACKOFF: Duration = Duration::from_secs(8);

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct RemoteExtractorConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub prompt_template: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub max_in_flight: usize,
}

impl Default for RemoteExtractorConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "extractor".into(),
            api_key: None,
            prompt_template: PROMPT_EN.into(),
            timeout_secs: 30.0,
            max_retries: 2,
            backoff_base_ms: 250,
            max_in_flight: 4,
        }
    }
}

impl RemoteExtractorConfig {
    pub fn validate(&self) -> Result<(), ExtractError> {
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(ExtractError::Config(format!(
                "timeout must be > 0, got {}",
                self.timeout_secs
            )));
        }
        if !self.prompt_template.contains(REAL_NAME_SLOT) {
            return Err(ExtractError::Config(format!(
                "prompt template lacks the {REAL_NAME_SLOT} slot"
            )));
        }
        if self.endpoint.trim().is_empty() {
            return Err(ExtractError::Config("empty endpoint".into()));
        }
        if self.max_in_flight == 0 {
            return Err(ExtractError::Config("max_in_flight must be at least 1".into()));
        }
        Ok(())
    }
}

/// Fills the name slot and appends the message as a JSON dialogue turn.
pub fn build_prompt(template: &str, message: &str, real_name: Option<&str>) -> String {
    let name = real_name
        .map(str::trim)
        .filter(|n| !n.is_empty())
        .unwrap_or(UNKNOWN_NAME);
    let mut prompt = template.trim_end_matches(['\n', '\r']).replace(REAL_NAME_SLOT, name);
    let content = serde_json::to_string(message).expect("strings serialize");
    prompt.push_str(&format!("{{\"role\": \"user\", \"content\": {content}}}"));
    prompt
}

/// Blocking chat-completion endpoint with retry and exponential backoff.
#[derive(Debug)]
pub struct ChatEndpoint {
    url: String,
    model: String,
    api_key: Option<String>,
    max_retries: u32,
    backoff_base: Duration,
    agent: ureq::Agent,
}

enum Attempt {
    Retry(String),
    Fatal(String),
}

impl ChatEndpoint {
    pub fn new(
        url: &str,
        model: &str,
        api_key: Option<String>,
        timeout: Duration,
        max_retries: u32,
        backoff_base: Duration,
    ) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            url: url.to_string(),
            model: model.to_string(),
            api_key,
            max_retries,
            backoff_base,
            agent,
        }
    }

    /// Sends one user-role prompt and returns the assistant content.
    pub fn complete(&self, prompt: &str) -> Result<String, ExtractError> {
        self.complete_messages(&[("user", prompt)])
    }

    /// Sends `(role, content)` pairs in order and returns the assistant content.
    pub fn complete_messages(&self, messages: &[(&str, &str)]) -> Result<String, ExtractError> {
        let messages: Vec<Value> = messages
            .iter()
            .map(|(role, content)| json!({"role": role, "content": content}))
            .collect();
        let body = json!({
            "model": self.model,
            "messages": messages,
            "temperature": 0,
        });
        let mut last = String::new();
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                let factor = 1u32.checked_shl(attempt - 1).unwrap_or(u32::MAX);
                std::thread::sleep(self.backoff_base.saturating_mul(factor).min(MAX_BACKOFF));
            }
            match self.attempt(&body) {
                Ok(content) => return Ok(content),
                Err(Attempt::Fatal(e)) => return Err(ExtractError::Transport(e)),
                Err(Attempt::Retry(e)) => {
                    tracing::debug!(attempt, error = %e, "chat request failed");
                    last = e;
                }
            }
        }
        Err(ExtractError::Transport(format!(
            "{} attempt(s) failed: {last}",
            self.max_retries + 1
        )))
    }

    fn attempt(&self, body: &Value) -> Result<String, Attempt> {
        let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        if status == 429 || status >= 500 {
            return Err(Attempt::Retry(format!("http status {status}")));
        }
        if !(200..300).contains(&status) {
            return Err(Attempt::Fatal(format!(
                "http status {status}: {}",
                truncate(&text, 200)
            )));
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| Attempt::Fatal(format!("reply is not JSON: {e}")))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| Attempt::Fatal("reply lacks choices[0].message.content".into()))
    }
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Extractor backed by a remote chat model.
#[derive(Debug)]
pub struct RemoteExtractor {
    config: RemoteExtractorConfig,
    endpoint: ChatEndpoint,
    dropped: AtomicU64,
    in_flight: Mutex<usize>,
    slot_freed: Condvar,
}

impl RemoteExtractor {
    pub fn new(config: RemoteExtractorConfig) -> Result<Self, ExtractError> {
        config.validate()?;
        let endpoint = ChatEndpoint::new(
            &config.endpoint,
            &config.model,
            config.api_key.clone(),
            Duration::from_secs_f64(config.timeout_secs),
            config.max_retries,
            Duration::from_millis(config.backoff_base_ms),
        );
        Ok(Self {
            config,
            endpoint,
            dropped: AtomicU64::new(0),
            in_flight: Mutex::new(0),
            slot_freed: Condvar::new(),
        })
    }

    pub fn config(&self) -> &RemoteExtractorConfig {
        &self.config
    }

    /// Items discarded so far because they were not substrings of their message.
    pub fn dropped_items(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }

    /// Blocks until fewer than `max_in_flight` calls are running, then runs `f`.
    fn throttled<T>(&self, f: impl FnOnce() -> T) -> T {
        {
            let mut n = self.in_flight.lock();
            while *n >= self.config.max_in_flight {
                self.slot_freed.wait(&mut n);
            }
            *n += 1;
        }
        struct Release<'a>(&'a RemoteExtractor);
        impl Drop for Release<'_> {
            fn drop(&mut self) {
                *self.0.in_flight.lock() -= 1;
                self.0.slot_freed.notify_one();
            }
        }
        let _release = Release(self);
        f()
    }
}

impl Extractor for RemoteExtractor {
    fn extract(&self, message: &str, real_name: Option<&str>) -> Result<Vec<PrivacyItem>, ExtractError> {
        let prompt = build_prompt(&self.config.prompt_template, message, real_name);
        let raw = self.throttled(|| self.endpoint.complete(&prompt))?;
        let items = parse_extraction_output(&raw).map_err(|error| ExtractError::Parse {
            error,
            raw: raw.clone(),
        })?;
        let (kept, dropped) = retain_substrings(message, items);
        if dropped > 0 {
            self.dropped.fetch_add(dropped as u64, Ordering::Relaxed);
            tracing::warn!(dropped, "extractor returned spans that are not in the message");
        }
        Ok(kept)
    }
}
