//! The cloud side of the loop. Clients only ever see sanitized text.

use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::Role;
use crate::extraction::ChatEndpoint;
use crate::sanitizer::SanitizedText;

use super::config::CloudSection;

#[derive(Debug, Error)]
#[error("cloud call failed: {0}")]
pub struct CloudError(pub String);

/// One forwarded message. The content type can only be produced by a sanitizer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CloudMessage {
    pub role: Role,
    pub content: SanitizedText,
}

pub trait CloudAgentClient: Send + Sync {
    /// `context` is the user's sanitized history, oldest first, ending with the new message.
    fn complete(&self, user_id: &str, context: &[CloudMessage]) -> Result<String, CloudError>;
}

/// Identity cloud: answers with the latest message verbatim.
#[derive(Debug, Default, Clone, Copy)]
pub struct EchoCloud;

impl CloudAgentClient for EchoCloud {
    fn complete(&self, _user_id: &str, context: &[CloudMessage]) -> Result<String, CloudError> {
        context
            .last()
            .map(|m| m.content.as_str().to_string())
            .ok_or_else(|| CloudError("empty context".into()))
    }
}

/// Chat-completion backed assistant.
#[derive(Debug)]
pub struct RemoteCloud {
    endpoint: ChatEndpoint,
}

impl RemoteCloud {
    pub fn new(section: &CloudSection) -> Self {
        Self {
            endpoint: ChatEndpoint::new(
                &section.endpoint,
                &section.model,
                section.api_key.clone(),
                Duration::from_secs_f64(section.timeout_secs),
                section.max_retries,
                Duration::from_millis(250),
            ),
        }
    }
}

impl CloudAgentClient for RemoteCloud {
    fn complete(&self, _user_id: &str, context: &[CloudMessage]) -> Result<String, CloudError> {
        let pairs: Vec<(&str, &str)> = context
            .iter()
            .map(|m| {
                let role = match m.role {
                    Role::User => "user",
                    Role::Assistant => "assistant",
                };
                (role, m.content.as_str())
            })
            .collect();
        self.endpoint
            .complete_messages(&pairs)
            .map_err(|e| CloudError(e.to_string()))
    }
}
