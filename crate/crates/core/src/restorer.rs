//! Downlink restoration: placeholders in a cloud reply back to stored values.

use serde::{Deserialize, Serialize};

use crate::placeholder::{find_placeholders, Placeholder};
use crate::store::MappingStore;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RestoredText {
    pub text: String,
    /// Placeholders substituted, in order of appearance (repeats included).
    pub resolved: Vec<String>,
    /// Grammar matches with no mapping for this user, left verbatim.
    pub unresolved: Vec<String>,
}

/// Single left-to-right scan; substituted values are never rescanned.
pub fn restore(user_id: &str, text: &str, store: &MappingStore) -> RestoredText {
    let mut out = String::with_capacity(text.len());
    let mut resolved = Vec::new();
    let mut unresolved = Vec::new();
    let mut at = 0;
    for (range, token) in find_placeholders(text) {
        out.push_str(&text[at..range.start]);
        let value = token
            .parse::<Placeholder>()
            .ok()
            .and_then(|p| store.lookup(user_id, &p));
        match value {
            Some(v) => {
                out.push_str(&v);
                resolved.push(token.to_string());
            }
            None => {
                out.push_str(token);
                unresolved.push(token.to_string());
            }
        }
        at = range.end;
    }
    out.push_str(&text[at..]);
    if !unresolved.is_empty() {
        tracing::warn!(user = user_id, unresolved = ?unresolved, "placeholders without a mapping left as-is");
    }
    RestoredText {
        text: out,
        resolved,
        unresolved,
    }
}
