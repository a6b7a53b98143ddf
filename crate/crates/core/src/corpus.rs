//! Annotated dialogue corpora: loading, validation, and summary statistics.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::tokenize;
use crate::taxonomy::PrivacyLevel;

/// One detected or annotated privacy span.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PrivacyItem {
    pub original_text: String,
    pub privacy_type: String,
    pub privacy_level: PrivacyLevel,
}

impl PrivacyItem {
    pub fn new(original_text: impl Into<String>, privacy_type: impl Into<String>, privacy_level: PrivacyLevel) -> Self {
        Self {
            original_text: original_text.into(),
            privacy_type: privacy_type.into(),
            privacy_level,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AnnotatedMessage {
    pub role: Role,
    pub content: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub annotations: Vec<PrivacyItem>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QaCategory {
    #[serde(alias = "basic memory")]
    BasicMemory,
    #[serde(alias = "temporal reasoning")]
    TemporalReasoning,
    #[serde(alias = "adversarial questioning")]
    AdversarialQuestioning,
    #[serde(alias = "dynamic updating")]
    DynamicUpdating,
    #[serde(alias = "implicit inference")]
    ImplicitInference,
    #[serde(alias = "information aggregation")]
    InformationAggregation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaItem {
    pub question: String,
    pub reference_answer: String,
    pub category: QaCategory,
    pub privacy_dependent: bool,
}

pub type Dialogue = Vec<AnnotatedMessage>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UserRecord {
    pub user_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub real_name: Option<String>,
    pub dialogues: Vec<Dialogue>,
    pub qa_items: Vec<QaItem>,
}

impl UserRecord {
    pub fn messages(&self) -> impl Iterator<Item = &AnnotatedMessage> {
        self.dialogues.iter().flatten()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Corpus {
    pub users: Vec<UserRecord>,
}

/// Position of a message inside a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MessageLocation {
    pub user_id: String,
    pub dialogue: usize,
    pub message: usize,
}

impl fmt::Display for MessageLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "user {:?} dialogue {} message {}",
            self.user_id, self.dialogue, self.message
        )
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus: {0}")]
    Io(#[from] std::io::Error),
    #[error("corpus parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{location}: {reason}")]
    Invalid { location: MessageLocation, reason: String },
    #[error("duplicate user_id {0:?}")]
    DuplicateUser(String),
}

// Wire shapes. Levels stay strings until validation so that a bad literal is
// reported with its message position instead of a bare line/column.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCorpus {
    users: Vec<RawUser>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawUser {
    user_id: String,
    #[serde(default)]
    real_name: Option<String>,
    #[serde(default)]
    dialogues: Vec<Vec<RawMessage>>,
    #[serde(default)]
    qa_items: Vec<QaItem>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMessage {
    role: Role,
    content: String,
    #[serde(default)]
    timestamp: Option<String>,
    #[serde(default)]
    annotations: Vec<RawAnnotation>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAnnotation {
    original_text: String,
    privacy_type: String,
    privacy_level: String,
}

impl Corpus {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn from_json(json: &str) -> Result<Self, CorpusError> {
        let raw: RawCorpus = serde_json::from_str(json)?;
        let mut seen = HashSet::new();
        let mut users = Vec::with_capacity(raw.users.len());
        for user in raw.users {
            if !seen.insert(user.user_id.clone()) {
                return Err(CorpusError::DuplicateUser(user.user_id));
            }
            let mut dialogues = Vec::with_capacity(user.dialogues.len());
            for (d, dialogue) in user.dialogues.into_iter().enumerate() {
                let mut messages = Vec::with_capacity(dialogue.len());
                for (m, msg) in dialogue.into_iter().enumerate() {
                    let location = || MessageLocation {
                        user_id: user.user_id.clone(),
                        dialogue: d,
                        message: m,
                    };
                    let annotations = msg
                        .annotations
                        .into_iter()
                        .enumerate()
                        .map(|(a, ann)| validate_annotation(&msg.content, a, ann))
                        .collect::<Result<Vec<_>, String>>()
                        .map_err(|reason| CorpusError::Invalid {
                            location: location(),
                            reason,
                        })?;
                    messages.push(AnnotatedMessage {
                        role: msg.role,
                        content: msg.content,
                        timestamp: msg.timestamp,
                        annotations,
                    });
                }
                dialogues.push(messages);
            }
            users.push(UserRecord {
                user_id: user.user_id,
                real_name: user.real_name,
                dialogues,
                qa_items: user.qa_items,
            });
        }
        Ok(Self { users })
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("corpus serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        fs::write(path, self.to_json_pretty())?;
        Ok(())
    }

    pub fn user(&self, user_id: &str) -> Option<&UserRecord> {
        self.users.iter().find(|u| u.user_id == user_id)
    }

    /// Every message with its location, in corpus order.
    pub fn messages(&self) -> impl Iterator<Item = (MessageLocation, &AnnotatedMessage)> {
        self.users.iter().flat_map(|u| {
            u.dialogues.iter().enumerate().flat_map(move |(d, dialogue)| {
                dialogue.iter().enumerate().map(move |(m, msg)| {
                    (
                        MessageLocation {
                            user_id: u.user_id.clone(),
                            dialogue: d,
                            message: m,
                        },
                        msg,
                    )
                })
            })
        })
    }
}

fn validate_annotation(content: &str, index: usize, ann: RawAnnotation) -> Result<PrivacyItem, String> {
    let level = PrivacyLevel::parse_extractable(&ann.privacy_level)
        .map_err(|_| format!("annotation {index}: invalid level {:?}", ann.privacy_level))?;
    if ann.original_text.is_empty() {
        return Err(format!("annotation {index}: empty original_text"));
    }
    if !content.contains(&ann.original_text) {
        return Err(format!(
            "annotation {index}: {:?} is not a substring of the message content",
            ann.original_text
        ));
    }
    Ok(PrivacyItem {
        original_text: ann.original_text,
        privacy_type: ann.privacy_type,
        privacy_level: level,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct UserStats {
    pub user_id: String,
    pub turns: u64,
    pub messages: u64,
    pub messages_with_privacy: u64,
    pub privacy_instances: u64,
    pub pl2: u64,
    pub pl3: u64,
    pub pl4: u64,
    pub questions: u64,
    pub tokens: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StatsReport {
    pub n_users: u64,
    /// Turns are counted as user-role messages.
    pub total_turns: u64,
    pub total_messages: u64,
    pub messages_with_privacy: u64,
    pub privacy_instances: u64,
    pub n_questions: u64,
    pub total_tokens: u64,
    pub pl2: u64,
    pub pl3: u64,
    pub pl4: u64,
    pub turns_per_user: f64,
    pub messages_per_user: f64,
    pub privacy_instances_per_user: f64,
    pub questions_per_user: f64,
    pub tokens_per_user: f64,
    pub per_user: Vec<UserStats>,
}

fn user_stats(user: &UserRecord) -> UserStats {
    let mut s = UserStats {
        user_id: user.user_id.clone(),
        questions: user.qa_items.len() as u64,
        ..Default::default()
    };
    for msg in user.messages() {
        s.messages += 1;
        if msg.role == Role::User {
            s.turns += 1;
        }
        if !msg.annotations.is_empty() {
            s.messages_with_privacy += 1;
        }
        s.tokens += tokenize(&msg.content).len() as u64;
        for ann in &msg.annotations {
            s.privacy_instances += 1;
            match ann.privacy_level {
                PrivacyLevel::PL2 => s.pl2 += 1,
                PrivacyLevel::PL3 => s.pl3 += 1,
                PrivacyLevel::PL4 => s.pl4 += 1,
                PrivacyLevel::PL1 => {}
            }
        }
    }
    s
}

pub fn compute_stats(corpus: &Corpus) -> StatsReport {
    let per_user: Vec<UserStats> = corpus.users.iter().map(user_stats).collect();
    let mut r = StatsReport {
        n_users: per_user.len() as u64,
        ..Default::default()
    };
    for u in &per_user {
        r.total_turns += u.turns;
        r.total_messages += u.messages;
        r.messages_with_privacy += u.messages_with_privacy;
        r.privacy_instances += u.privacy_instances;
        r.n_questions += u.questions;
        r.total_tokens += u.tokens;
        r.pl2 += u.pl2;
        r.pl3 += u.pl3;
        r.pl4 += u.pl4;
    }
    if r.n_users > 0 {
        let n = r.n_users as f64;
        r.turns_per_user = r.total_turns as f64 / n;
        r.messages_per_user = r.total_messages as f64 / n;
        r.privacy_instances_per_user = r.privacy_instances as f64 / n;
        r.questions_per_user = r.n_questions as f64 / n;
        r.tokens_per_user = r.total_tokens as f64 / n;
    }
    r.per_user = per_user;
    r
}

impl StatsReport {
    /// Two-column text table in the layout of a dataset statistics summary.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let mut row = |k: &str, v: String| out.push_str(&format!("{k:<28} {v:>14}\n"));
        row("Number of Users", self.n_users.to_string());
        row("Total Turns", self.total_turns.to_string());
        row("Total Messages", self.total_messages.to_string());
        row("Messages with Privacy", self.messages_with_privacy.to_string());
        row("Privacy Instances", self.privacy_instances.to_string());
        row("Number of Questions", self.n_questions.to_string());
        row("Total Tokens", self.total_tokens.to_string());
        row("Turns per User", format!("{:.2}", self.turns_per_user));
        row("Messages per User", format!("{:.2}", self.messages_per_user));
        row(
            "Privacy Instances per User",
            format!("{:.2}", self.privacy_instances_per_user),
        );
        row("Questions per User", format!("{:.2}", self.questions_per_user));
        row("Tokens per User", format!("{:.2}", self.tokens_per_user));
        row("PL4 Instances", self.pl4.to_string());
        row("PL3 Instances", self.pl3.to_string());
        row("PL2 Instances", self.pl2.to_string());
        out
    }
}

#[cfg(test)]
pub(crate) mod tests_support {
    pub const ONE_SHOT_MESSAGE: &str = "Hello, my name is Zhang San, and my mobile number is 13800138000. I've been having insomnia recently, and the doctor diagnosed me with mild depression. Here is a photo of my prescription. Also, I just received a verification code 89757, please fill it in for me. By the way, I like spicy food and I speak quite directly.";
}
