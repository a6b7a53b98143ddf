//! The closed loop: extract, mask, call the cloud, restore.

pub mod bench;
pub mod cloud;
pub mod config;
pub mod experiment;
pub mod memory;
pub mod server;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::Instant;

use parking_lot::Mutex;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::{PrivacyItem, Role};
use crate::extraction::{ExtractError, Extractor, RemoteExtractor, RuleExtractor};
use crate::placeholder::find_placeholders;
use crate::restorer::{restore, RestoredText};
use crate::sanitizer::{
    passthrough, sanitize, sanitize_irreversible, sanitize_untyped, AppliedMask, SanitizedMessage, SanitizedText,
    Strategy, UntypedSession,
};
use crate::store::{MappingStore, StoreError};
use crate::taxonomy::PrivacyLevel;

use cloud::{CloudAgentClient, CloudMessage, EchoCloud, RemoteCloud};
use config::{CloudKind, ConfigError, ExtractorKind, GatewayConfig};
use memory::{MemoryCloud, MockMemorySystem};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("input already contains placeholder-like text {found:?}; refusing so restoration stays exact")]
    PlaceholderInInput { found: String },
    #[error("user id must be non-empty")]
    EmptyUser,
    #[error(transparent)]
    Extraction(#[from] ExtractError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub extract_ms: f64,
    pub sanitize_ms: f64,
    pub cloud_ms: f64,
    pub restore_ms: f64,
}

/// Local record of one turn. Holds raw text; see [`TurnAudit::cloud_view`] for the shareable part.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TurnAudit {
    pub user_id: String,
    pub strategy: Strategy,
    pub input: String,
    pub sanitized: String,
    pub cloud_response: Option<String>,
    pub restored: Option<String>,
    pub items_per_level: BTreeMap<PrivacyLevel, usize>,
    pub applied: Vec<AppliedMask>,
    pub unresolved: Vec<String>,
    pub timings: StageTimings,
    pub error: Option<String>,
}

/// The part of an audit that may be logged outside the device.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CloudAuditView {
    pub strategy: Strategy,
    pub sanitized: String,
    pub cloud_response: Option<String>,
    pub placeholders: Vec<String>,
    pub items_per_level: BTreeMap<PrivacyLevel, usize>,
    pub unresolved: Vec<String>,
    pub error: Option<String>,
}

impl TurnAudit {
    pub fn cloud_view(&self) -> CloudAuditView {
        CloudAuditView {
            strategy: self.strategy,
            sanitized: self.sanitized.clone(),
            cloud_response: self.cloud_response.clone(),
            placeholders: self.applied.iter().map(|a| a.placeholder.clone()).collect(),
            items_per_level: self.items_per_level.clone(),
            unresolved: self.unresolved.clone(),
            error: self.error.clone(),
        }
    }
}

#[derive(Debug, Default)]
struct UserSession {
    history: Vec<CloudMessage>,
    untyped: UntypedSession,
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1000.0
}

/// Rejects raw input that already contains placeholder-grammar text.
pub fn check_input(text: &str) -> Result<(), GatewayError> {
    match find_placeholders(text).next() {
        Some((_, found)) => Err(GatewayError::PlaceholderInInput {
            found: found.to_string(),
        }),
        None => Ok(()),
    }
}

pub struct Gateway {
    strategy: Strategy,
    mask_level: PrivacyLevel,
    extractor: Arc<dyn Extractor>,
    store: Arc<MappingStore>,
    cloud: Arc<dyn CloudAgentClient>,
    sessions: Mutex<HashMap<String, Arc<Mutex<UserSession>>>>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("strategy", &self.strategy)
            .field("mask_level", &self.mask_level)
            .field("store", &self.store)
            .finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(
        strategy: Strategy,
        mask_level: PrivacyLevel,
        extractor: Arc<dyn Extractor>,
        store: Arc<MappingStore>,
        cloud: Arc<dyn CloudAgentClient>,
    ) -> Self {
        Self {
            strategy,
            mask_level,
            extractor,
            store,
            cloud,
            sessions: Mutex::new(HashMap::new()),
        }
    }

    /// Builds extractor, store and cloud client as configured.
    pub fn from_config(config: &GatewayConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let extractor: Arc<dyn Extractor> = match config.extractor {
            ExtractorKind::Rules => Arc::new(RuleExtractor),
            ExtractorKind::Remote => Arc::new(RemoteExtractor::new(config.remote_extractor.to_extractor_config()?)?),
        };
        let store = match &config.store_path {
            Some(p) => MappingStore::open(p)?,
            None => MappingStore::in_memory(),
        };
        let cloud: Arc<dyn CloudAgentClient> = match config.cloud.kind {
            CloudKind::Echo => Arc::new(EchoCloud),
            CloudKind::Mock => Arc::new(MemoryCloud::new(Arc::new(MockMemorySystem::default()))),
            CloudKind::Remote => Arc::new(RemoteCloud::new(&config.cloud)),
        };
        Ok(Self::new(
            config.strategy,
            config.mask_level,
            extractor,
            Arc::new(store),
            cloud,
        ))
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn mask_level(&self) -> PrivacyLevel {
        self.mask_level
    }

    pub fn store(&self) -> &Arc<MappingStore> {
        &self.store
    }

    fn session(&self, user_id: &str) -> Arc<Mutex<UserSession>> {
        self.sessions.lock().entry(user_id.to_string()).or_default().clone()
    }

    fn mask(
        &self,
        user_id: &str,
        text: &str,
        items: &[PrivacyItem],
        session: &mut UserSession,
    ) -> Result<SanitizedMessage, StoreError> {
        Ok(match self.strategy {
            Strategy::None => passthrough(text),
            Strategy::Irreversible => sanitize_irreversible(text, items, self.mask_level),
            Strategy::UntypedPlaceholder => sanitize_untyped(text, items, self.mask_level, &mut session.untyped),
            Strategy::TypedReversible => sanitize(user_id, text, items, self.mask_level, &self.store)?,
        })
    }

    /// Extracts and masks `text` with the configured strategy, returning the detected items too.
    pub fn sanitize_detailed(
        &self,
        user_id: &str,
        text: &str,
        real_name: Option<&str>,
    ) -> Result<(SanitizedMessage, Vec<PrivacyItem>), GatewayError> {
        if user_id.is_empty() {
            return Err(GatewayError::EmptyUser);
        }
        check_input(text)?;
        let items = self.extractor.extract(text, real_name)?;
        let session = self.session(user_id);
        let mut session = session.lock();
        let masked = self.mask(user_id, text, &items, &mut session)?;
        Ok((masked, items))
    }

    pub fn sanitize_text(
        &self,
        user_id: &str,
        text: &str,
        real_name: Option<&str>,
    ) -> Result<SanitizedMessage, GatewayError> {
        self.sanitize_detailed(user_id, text, real_name).map(|(m, _)| m)
    }

    /// Masks `text` with caller-supplied items instead of running the extractor.
    pub fn sanitize_items(
        &self,
        user_id: &str,
        text: &str,
        items: &[PrivacyItem],
    ) -> Result<SanitizedMessage, GatewayError> {
        if user_id.is_empty() {
            return Err(GatewayError::EmptyUser);
        }
        check_input(text)?;
        let session = self.session(user_id);
        let mut session = session.lock();
        Ok(self.mask(user_id, text, items, &mut session)?)
    }

    pub fn restore_text(&self, user_id: &str, text: &str) -> RestoredText {
        restore(user_id, text, &self.store)
    }

    /// Runs one full turn. Turns of the same user are serialized.
    pub fn process_turn(
        &self,
        user_id: &str,
        message: &str,
        real_name: Option<&str>,
    ) -> Result<TurnAudit, GatewayError> {
        if user_id.is_empty() {
            return Err(GatewayError::EmptyUser);
        }
        check_input(message)?;
        let session = self.session(user_id);
        let mut session = session.lock();
        let mut timings = StageTimings::default();

        let t = Instant::now();
        let items = self.extractor.extract(message, real_name)?;
        timings.extract_ms = ms_since(t);

        let t = Instant::now();
        let masked = self.mask(user_id, message, &items, &mut session)?;
        timings.sanitize_ms = ms_since(t);

        let mut items_per_level = BTreeMap::new();
        for i in &items {
            *items_per_level.entry(i.privacy_level).or_insert(0) += 1;
        }
        let mut audit = TurnAudit {
            user_id: user_id.to_string(),
            strategy: self.strategy,
            input: message.to_string(),
            sanitized: masked.text.clone(),
            cloud_response: None,
            restored: None,
            items_per_level,
            applied: masked.applied.clone(),
            unresolved: Vec::new(),
            timings,
            error: None,
        };

        session.history.push(CloudMessage {
            role: Role::User,
            content: masked.cloud_text(),
        });
        let t = Instant::now();
        let reply = self.cloud.complete(user_id, &session.history);
        audit.timings.cloud_ms = ms_since(t);
        let reply = match reply {
            Ok(r) => r,
            Err(e) => {
                audit.error = Some(e.to_string());
                return Ok(audit);
            }
        };

        let t = Instant::now();
        if self.strategy.is_reversible() {
            let restored = self.restore_text(user_id, &reply);
            audit.unresolved = restored.unresolved;
            audit.restored = Some(restored.text);
        } else {
            audit.restored = Some(reply.clone());
        }
        audit.timings.restore_ms = ms_since(t);
        // The reply is already in cloud form; it joins the history as-is.
        session.history.push(CloudMessage {
            role: Role::Assistant,
            content: SanitizedText::from_cloud_reply(&reply),
        });
        audit.cloud_response = Some(reply);
        Ok(audit)
    }

    /// Removes the user's mappings and session history.
    pub fn forget_user(&self, user_id: &str) -> Result<usize, GatewayError> {
        self.sessions.lock().remove(user_id);
        Ok(self.store.delete_user(user_id)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tests_support::ONE_SHOT_MESSAGE;

    fn gw(strategy: Strategy, cloud: Arc<dyn CloudAgentClient>) -> Gateway {
        Gateway::new(
            strategy,
            PrivacyLevel::PL2,
            Arc::new(RuleExtractor),
            Arc::new(MappingStore::in_memory()),
            cloud,
        )
    }

    struct Fixed(&'static str);
    impl CloudAgentClient for Fixed {
        fn complete(&self, _: &str, _: &[CloudMessage]) -> Result<String, cloud::CloudError> {
            Ok(self.0.to_string())
        }
    }

    struct Down;
    impl CloudAgentClient for Down {
        fn complete(&self, _: &str, _: &[CloudMessage]) -> Result<String, cloud::CloudError> {
            Err(cloud::CloudError("unreachable".into()))
        }
    }

    #[test]
    fn echo_round_trip() {
        let g = gw(Strategy::TypedReversible, Arc::new(EchoCloud));
        let a = g.process_turn("u", ONE_SHOT_MESSAGE, Some("Zhang San")).unwrap();
        assert_eq!(a.restored.as_deref(), Some(ONE_SHOT_MESSAGE));
        assert!(!a.sanitized.contains("13800138000"));
        assert!(a.sanitized.contains("<PHONE_NUMBER_1>"));
        assert_eq!(a.applied.len(), 3);
        let view = serde_json::to_string(&a.cloud_view()).unwrap();
        assert!(!view.contains("13800138000") && !view.contains("Zhang San"));
    }

    #[test]
    fn restores_cloud_reply() {
        let g = gw(
            Strategy::TypedReversible,
            Arc::new(Fixed("Your email <EMAIL_1> is confirmed")),
        );
        let a = g.process_turn("u", "please register alice@x.com", None).unwrap();
        assert_eq!(a.restored.as_deref(), Some("Your email alice@x.com is confirmed"));
    }

    #[test]
    fn irreversible_has_no_restoration() {
        let g = gw(Strategy::Irreversible, Arc::new(EchoCloud));
        let a = g.process_turn("u", "mail alice@x.com", None).unwrap();
        assert_eq!(a.restored.as_deref(), Some("mail ***"));
    }

    #[test]
    fn rejects_placeholder_input() {
        let g = gw(Strategy::TypedReversible, Arc::new(EchoCloud));
        assert!(matches!(
            g.process_turn("u", "echo <EMAIL_1>", None),
            Err(GatewayError::PlaceholderInInput { .. })
        ));
        assert!(matches!(g.process_turn("", "hi", None), Err(GatewayError::EmptyUser)));
    }

    #[test]
    fn cloud_failure_is_recorded() {
        let g = gw(Strategy::TypedReversible, Arc::new(Down));
        let a = g.process_turn("u", "mail alice@x.com", None).unwrap();
        assert!(a.error.is_some());
        assert!(a.restored.is_none() && a.cloud_response.is_none());
    }

    #[test]
    fn history_is_sanitized() {
        struct Spy(Mutex<Vec<String>>);
        impl CloudAgentClient for Spy {
            fn complete(&self, _: &str, ctx: &[CloudMessage]) -> Result<String, cloud::CloudError> {
                self.0.lock().extend(ctx.iter().map(|m| m.content.as_str().to_string()));
                Ok("ok".into())
            }
        }
        let spy = Arc::new(Spy(Mutex::new(Vec::new())));
        let g = gw(Strategy::TypedReversible, spy.clone());
        g.process_turn("u", "mail alice@x.com", None).unwrap();
        g.process_turn("u", "call 13800138000", None).unwrap();
        let seen = spy.0.lock().join("\n");
        assert!(!seen.contains("alice@x.com") && !seen.contains("13800138000"));
        assert_eq!(seen.matches("<EMAIL_1>").count(), 2);
    }

    #[test]
    fn forget_user_resets() {
        let g = gw(Strategy::TypedReversible, Arc::new(EchoCloud));
        g.process_turn("u", "mail alice@x.com and bob@y.io", None).unwrap();
        assert_eq!(g.forget_user("u").unwrap(), 2);
        let a = g.process_turn("u", "mail bob@y.io", None).unwrap();
        assert_eq!(a.sanitized, "mail <EMAIL_1>");
    }
}
