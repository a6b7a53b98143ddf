//! Deterministic stand-in for a cloud memory agent.
//!
//! Stores what the gateway forwards, retrieves by key-token overlap, and
//! answers with the part of the best sentence that follows the last key token
//! of the question. Mask tokens (`<SLUG_N>`, `<Mask_N>`, `***`) are opaque: they
//! never match a question token and are carried into answers whole.

use std::collections::{HashMap, HashSet};
use std::ops::Range;

use parking_lot::RwLock;

use super::cloud::{CloudAgentClient, CloudError, CloudMessage};
use crate::metrics::is_cjk_ideograph;
use crate::sanitizer::mask_token_spans;

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "at", "be", "did", "do", "does", "for", "from", "had", "has", "have", "how", "i", "in",
    "is", "it", "me", "my", "of", "on", "or", "the", "to", "was", "were", "what", "when", "where", "which", "who",
    "why", "with", "you", "your", "我", "的", "是", "什", "么", "吗", "呢", "了",
];

const LEAD_CONNECTORS: &[&str] = &["is", "are", "was", "were", "be", "as", "to", "of", "at", "in", "on"];

#[derive(Debug, Clone)]
struct Unit {
    range: Range<usize>,
    /// `None` for mask tokens.
    token: Option<String>,
}

fn units(text: &str) -> Vec<Unit> {
    let mut out = Vec::new();
    let push_words = |seg: &str, base: usize, out: &mut Vec<Unit>| {
        let mut start: Option<usize> = None;
        for (i, c) in seg.char_indices() {
            if is_cjk_ideograph(c) {
                if let Some(s) = start.take() {
                    out.push(Unit {
                        range: base + s..base + i,
                        token: Some(seg[s..i].to_lowercase()),
                    });
                }
                out.push(Unit {
                    range: base + i..base + i + c.len_utf8(),
                    token: Some(c.to_string()),
                });
            } else if c.is_alphanumeric() {
                start.get_or_insert(i);
            } else if let Some(s) = start.take() {
                out.push(Unit {
                    range: base + s..base + i,
                    token: Some(seg[s..i].to_lowercase()),
                });
            }
        }
        if let Some(s) = start {
            out.push(Unit {
                range: base + s..base + seg.len(),
                token: Some(seg[s..].to_lowercase()),
            });
        }
    };
    let mut at = 0;
    for m in mask_token_spans(text) {
        push_words(&text[at..m.start], at, &mut out);
        at = m.end;
        out.push(Unit { range: m, token: None });
    }
    push_words(&text[at..], at, &mut out);
    out
}

/// Distinct non-stopword tokens of a question.
pub fn key_tokens(text: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    units(text)
        .into_iter()
        .filter_map(|u| u.token)
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .filter(|t| seen.insert(t.clone()))
        .collect()
}

fn overlap(text: &str, keys: &[String]) -> usize {
    let present: HashSet<String> = units(text).into_iter().filter_map(|u| u.token).collect();
    keys.iter().filter(|k| present.contains(*k)).count()
}

/// Sentence spans: split after `!?;` and CJK terminators, after `.` only when followed by whitespace or the end, and at newlines.
fn sentences(text: &str) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut iter = text.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        let next = iter.peek().map(|&(_, n)| n);
        let ends = match c {
            '!' | '?' | ';' | '\n' | '。' | '！' | '？' | '；' => true,
            '.' => next.is_none_or(char::is_whitespace),
            _ => false,
        };
        if ends {
            let end = i + c.len_utf8();
            if !text[start..end].trim().is_empty() {
                out.push(start..end);
            }
            start = end;
        }
    }
    if !text[start..].trim().is_empty() {
        out.push(start..text.len());
    }
    out
}

fn trim_fragment(s: &str) -> &str {
    let is_edge = |c: char| c.is_whitespace() || ",.;:!?，。；：！？、-\"'()".contains(c);
    let mut s = s.trim_matches(is_edge);
    loop {
        let lower = s.to_lowercase();
        let Some(word) = LEAD_CONNECTORS
            .iter()
            .find(|w| lower.starts_with(*w) && lower[w.len()..].starts_with(char::is_whitespace))
        else {
            return s;
        };
        s = s[word.len()..].trim_start_matches(is_edge);
    }
}

#[derive(Debug)]
pub struct MockMemorySystem {
    users: RwLock<HashMap<String, Vec<String>>>,
    top_k: usize,
}

impl Default for MockMemorySystem {
    fn default() -> Self {
        Self::new(3)
    }
}

impl MockMemorySystem {
    pub fn new(top_k: usize) -> Self {
        Self {
            users: RwLock::new(HashMap::new()),
            top_k: top_k.max(1),
        }
    }

    /// Appends a forwarded message to the user's memory.
    pub fn ingest(&self, user_id: &str, text: &str) {
        self.users
            .write()
            .entry(user_id.to_string())
            .or_default()
            .push(text.to_string());
    }

    pub fn memories(&self, user_id: &str) -> Vec<String> {
        self.users.read().get(user_id).cloned().unwrap_or_default()
    }

    /// Top `k` memories by key-token overlap with `query` (ties: earlier first); zero overlap excluded.
    pub fn retrieve(&self, user_id: &str, query: &str, k: usize) -> Vec<String> {
        let keys = key_tokens(query);
        let users = self.users.read();
        let Some(mem) = users.get(user_id) else {
            return Vec::new();
        };
        let mut scored: Vec<(usize, usize)> = mem
            .iter()
            .enumerate()
            .map(|(i, m)| (overlap(m, &keys), i))
            .filter(|(s, _)| *s > 0)
            .collect();
        scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        scored.into_iter().take(k).map(|(_, i)| mem[i].clone()).collect()
    }

    /// Answers from the best-matching sentence among the retrieved memories.
    pub fn answer(&self, user_id: &str, question: &str) -> String {
        let keys = key_tokens(question);
        let mut best: Option<(usize, String)> = None;
        for memory in self.retrieve(user_id, question, self.top_k) {
            for r in sentences(&memory) {
                let sentence = &memory[r];
                let score = overlap(sentence, &keys);
                if score > 0 && best.as_ref().is_none_or(|(s, _)| score > *s) {
                    best = Some((score, sentence.to_string()));
                }
            }
        }
        let Some((_, sentence)) = best else {
            return "I don't know.".to_string();
        };
        let us = units(&sentence);
        let last = us
            .iter()
            .rposition(|u| u.token.as_ref().is_some_and(|t| keys.contains(t)))
            .expect("best sentence overlaps the key tokens");
        let rest = trim_fragment(&sentence[us[last].range.end..]);
        if rest.is_empty() {
            trim_fragment(&sentence).to_string()
        } else {
            rest.to_string()
        }
    }
}

/// Cloud client over a shared [`MockMemorySystem`]: questions are answered,
/// anything else is remembered.
#[derive(Debug, Clone)]
pub struct MemoryCloud {
    memory: std::sync::Arc<MockMemorySystem>,
}

impl MemoryCloud {
    pub fn new(memory: std::sync::Arc<MockMemorySystem>) -> Self {
        Self { memory }
    }

    pub fn memory(&self) -> &MockMemorySystem {
        &self.memory
    }
}

fn is_question(text: &str) -> bool {
    let t = text.trim_end();
    t.ends_with('?') || t.ends_with('？')
}

impl CloudAgentClient for MemoryCloud {
    fn complete(&self, user_id: &str, context: &[CloudMessage]) -> Result<String, CloudError> {
        let last = context.last().ok_or_else(|| CloudError("empty context".into()))?;
        let text = last.content.as_str();
        if is_question(text) {
            Ok(self.memory.answer(user_id, text))
        } else {
            self.memory.ingest(user_id, text);
            Ok("Noted.".to_string())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mem(lines: &[&str]) -> MockMemorySystem {
        let m = MockMemorySystem::new(3);
        for l in lines {
            m.ingest("u", l);
        }
        m
    }

    #[test]
    fn units_keep_masks_whole() {
        let us = units("Email <EMAIL_1>, code ***; <Mask_2>!");
        let toks: Vec<Option<&str>> = us.iter().map(|u| u.token.as_deref()).collect();
        assert_eq!(toks, [Some("email"), None, Some("code"), None, None]);
    }

    #[test]
    fn sentence_split_keeps_emails() {
        let t = "Mail me at a.b@x.com. Thanks!";
        let s: Vec<&str> = sentences(t).into_iter().map(|r| t[r].trim()).collect();
        assert_eq!(s, ["Mail me at a.b@x.com.", "Thanks!"]);
    }

    #[test]
    fn answers_follow_key_tokens() {
        let m = mem(&[
            "I really enjoy hiking in the mountains.",
            "My email address is alice@x.com, please remember it.",
            "Noted.",
        ]);
        assert_eq!(
            m.answer("u", "What is my email address?"),
            "alice@x.com, please remember it"
        );
        assert_eq!(m.answer("u", "Which hobby do I enjoy?"), "hiking in the mountains");
        assert_eq!(m.answer("u", "What car do I drive?"), "I don't know.");
        assert_eq!(m.answer("nobody", "What is my email address?"), "I don't know.");
    }

    #[test]
    fn masks_are_returned_whole() {
        let m = mem(&["My email address is <EMAIL_1>.", "My phone number is ***."]);
        assert_eq!(m.answer("u", "What is my email address?"), "<EMAIL_1>");
        assert_eq!(m.answer("u", "What is my phone number?"), "***");
    }

    #[test]
    fn retrieval_is_ranked_and_stable() {
        let m = mem(&["cats and dogs", "dogs", "cats dogs birds", "fish"]);
        assert_eq!(
            m.retrieve("u", "cats dogs birds?", 2),
            ["cats dogs birds", "cats and dogs"]
        );
        assert_eq!(
            m.retrieve("u", "dogs?", 5),
            ["cats and dogs", "dogs", "cats dogs birds"]
        );
    }

    #[test]
    fn cloud_adapter() {
        use crate::sanitizer::passthrough;
        let cloud = MemoryCloud::new(std::sync::Arc::new(MockMemorySystem::default()));
        let msg = |t: &str| CloudMessage {
            role: crate::corpus::Role::User,
            content: passthrough(t).cloud_text(),
        };
        assert_eq!(
            cloud.complete("u", &[msg("My favourite colour is teal.")]).unwrap(),
            "Noted."
        );
        assert_eq!(
            cloud.complete("u", &[msg("What is my favourite colour?")]).unwrap(),
            "teal"
        );
        assert_eq!(cloud.memory().memories("u").len(), 1);
    }
}
