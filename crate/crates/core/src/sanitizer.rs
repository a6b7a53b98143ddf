//! Uplink masking: typed reversible placeholders plus the two baselines.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::PrivacyItem;
use crate::placeholder::within_placeholder_alphabet;
use crate::store::{MappingStore, StoreError};
use crate::taxonomy::{slug_or_fallback, PrivacyLevel};

pub const IRREVERSIBLE_MASK: &str = "***";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "irreversible")]
    Irreversible,
    #[serde(rename = "untyped_placeholder", alias = "untyped")]
    UntypedPlaceholder,
    #[serde(rename = "typed_reversible", alias = "typed")]
    TypedReversible,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Self::None,
        Self::Irreversible,
        Self::UntypedPlaceholder,
        Self::TypedReversible,
    ];

    /// Short name used on the command line and in config files.
    pub fn short_name(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Irreversible => "irreversible",
            Self::UntypedPlaceholder => "untyped",
            Self::TypedReversible => "typed",
        }
    }

    pub fn is_reversible(self) -> bool {
        self == Self::TypedReversible
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "none" => Ok(Self::None),
            "irreversible" => Ok(Self::Irreversible),
            "untyped" | "untyped_placeholder" => Ok(Self::UntypedPlaceholder),
            "typed" | "typed_reversible" => Ok(Self::TypedReversible),
            other => Err(format!(
                "unknown strategy {other:?} (expected none, irreversible, untyped or typed)"
            )),
        }
    }
}

/// One masked value and what replaced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppliedMask {
    pub placeholder: String,
    pub original_value: String,
    pub type_slug: String,
    pub level: PrivacyLevel,
    /// Occurrences replaced by this mask itself; 0 when every occurrence sat inside a longer masked value.
    pub occurrence_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedItem {
    pub original_text: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SanitizedMessage {
    pub text: String,
    pub applied: Vec<AppliedMask>,
    pub strategy: Strategy,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<SkippedItem>,
}

impl SanitizedMessage {
    /// The only form of a message that may leave the device.
    pub(crate) fn cloud_text(&self) -> SanitizedText {
        SanitizedText(self.text.clone())
    }
}

/// Text that went through a sanitizer. Only this crate can construct it, so
/// anything typed `SanitizedText` has been masked (or deliberately passed
/// through by the `none` strategy).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct SanitizedText(String);

impl SanitizedText {
    /// A cloud reply is already in cloud form and may be sent back as context.
    pub(crate) fn from_cloud_reply(reply: &str) -> Self {
        Self(reply.to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SanitizedText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Counter state for `<Mask_N>` numbering; one per experiment run and user.
#[derive(Debug, Clone, Default)]
pub struct UntypedSession {
    assigned: HashMap<String, u64>,
    next: u64,
}

impl UntypedSession {
    pub fn new() -> Self {
        Self::default()
    }

    fn mask_for(&mut self, value: &str) -> String {
        let n = *self.assigned.entry(value.to_string()).or_insert_with(|| {
            self.next += 1;
            self.next
        });
        format!("<Mask_{n}>")
    }
}

static MASK_TOKEN: Lazy<Regex> = Lazy::new(|| {
    Regex::new(r"<[A-Z][A-Z0-9_]*_[1-9][0-9]*>|<Mask_[1-9][0-9]*>|\*{3,}").expect("mask pattern compiles")
});

/// Spans of every mask any strategy can emit: typed placeholders, `<Mask_N>` and `***`.
pub fn mask_token_spans(text: &str) -> Vec<Range<usize>> {
    MASK_TOKEN.find_iter(text).map(|m| m.range()).collect()
}

/// Items at or above `threshold` that occur in `message`, deduplicated by
/// text (first wins), in first-occurrence order (longer first on ties).
fn select(
    message: &str,
    items: &[PrivacyItem],
    threshold: PrivacyLevel,
) -> (Vec<(PrivacyItem, usize)>, Vec<SkippedItem>) {
    let mut seen = HashSet::new();
    let mut chosen = Vec::new();
    let mut skipped = Vec::new();
    for item in items.iter().filter(|i| i.privacy_level >= threshold) {
        if item.original_text.is_empty() {
            skipped.push(SkippedItem {
                original_text: String::new(),
                reason: "empty original_text".into(),
            });
            continue;
        }
        let Some(pos) = message.find(&item.original_text) else {
            skipped.push(SkippedItem {
                original_text: item.original_text.clone(),
                reason: "not a substring of the message".into(),
            });
            continue;
        };
        if seen.insert(item.original_text.as_str()) {
            chosen.push((item.clone(), pos));
        }
    }
    chosen.sort_by(|a, b| {
        a.1.cmp(&b.1)
            .then(b.0.original_text.len().cmp(&a.0.original_text.len()))
    });
    (chosen, skipped)
}

/// Non-overlapping spans to replace: longest value first, then leftmost
/// first occurrence; each value claims every occurrence not already covered.
fn plan(message: &str, values: &[(&str, usize)]) -> Vec<(Range<usize>, usize)> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .0
            .len()
            .cmp(&values[a].0.len())
            .then(values[a].1.cmp(&values[b].1))
    });
    let mut claimed: Vec<(Range<usize>, usize)> = Vec::new();
    for idx in order {
        let v = values[idx].0;
        let mut from = 0;
        while let Some(off) = message[from..].find(v) {
            let start = from + off;
            let span = start..start + v.len();
            if claimed.iter().any(|(c, _)| c.start < span.end && span.start < c.end) {
                let step = message[start..].chars().next().map_or(1, char::len_utf8);
                from = start + step;
            } else {
                from = span.end;
                claimed.push((span, idx));
            }
        }
    }
    claimed.sort_by_key(|(r, _)| r.start);
    claimed
}

fn rewrite(message: &str, spans: &[(Range<usize>, usize)], masks: &[String]) -> String {
    let mut out = String::with_capacity(message.len());
    let mut at = 0;
    for (r, idx) in spans {
        out.push_str(&message[at..r.start]);
        out.push_str(&masks[*idx]);
        at = r.end;
    }
    out.push_str(&message[at..]);
    out
}

fn build(
    message: &str,
    chosen: &[(PrivacyItem, usize)],
    masks: Vec<String>,
    slugs_levels: Vec<(String, PrivacyLevel)>,
    strategy: Strategy,
    skipped: Vec<SkippedItem>,
) -> SanitizedMessage {
    let values: Vec<(&str, usize)> = chosen.iter().map(|(i, p)| (i.original_text.as_str(), *p)).collect();
    let spans = plan(message, &values);
    let mut counts = vec![0usize; chosen.len()];
    for (_, idx) in &spans {
        counts[*idx] += 1;
    }
    let text = rewrite(message, &spans, &masks);
    let applied = chosen
        .iter()
        .zip(masks)
        .zip(slugs_levels)
        .zip(counts)
        .map(
            |((((item, _), placeholder), (type_slug, level)), occurrence_count)| AppliedMask {
                placeholder,
                original_value: item.original_text.clone(),
                type_slug,
                level,
                occurrence_count,
            },
        )
        .collect();
    SanitizedMessage {
        text,
        applied,
        strategy,
        skipped,
    }
}

fn warn_alphabet(chosen: &[(PrivacyItem, usize)]) {
    for (item, _) in chosen {
        if within_placeholder_alphabet(&item.original_text) {
            tracing::warn!(
                len = item.original_text.len(),
                "masked value uses only placeholder characters"
            );
        }
    }
}

/// Typed reversible masking backed by the mapping store.
pub fn sanitize(
    user_id: &str,
    message: &str,
    items: &[PrivacyItem],
    threshold: PrivacyLevel,
    store: &MappingStore,
) -> Result<SanitizedMessage, StoreError> {
    let (chosen, skipped) = select(message, items, threshold);
    warn_alphabet(&chosen);
    let mut masks = Vec::with_capacity(chosen.len());
    let mut meta = Vec::with_capacity(chosen.len());
    for (item, _) in &chosen {
        let m = store.get_or_create_mapping(user_id, &item.original_text, &item.privacy_type, item.privacy_level)?;
        masks.push(m.placeholder.to_string());
        meta.push((m.type_slug, m.privacy_level));
    }
    Ok(build(message, &chosen, masks, meta, Strategy::TypedReversible, skipped))
}

/// Replaces every masked span with `***`.
pub fn sanitize_irreversible(message: &str, items: &[PrivacyItem], threshold: PrivacyLevel) -> SanitizedMessage {
    let (chosen, skipped) = select(message, items, threshold);
    let masks = vec![IRREVERSIBLE_MASK.to_string(); chosen.len()];
    let meta = chosen
        .iter()
        .map(|(i, _)| (slug_or_fallback(&i.privacy_type), i.privacy_level))
        .collect();
    build(message, &chosen, masks, meta, Strategy::Irreversible, skipped)
}

/// Replaces masked spans with `<Mask_N>`, numbered in first-occurrence order
/// and reused for repeated values within `session`.
pub fn sanitize_untyped(
    message: &str,
    items: &[PrivacyItem],
    threshold: PrivacyLevel,
    session: &mut UntypedSession,
) -> SanitizedMessage {
    let (chosen, skipped) = select(message, items, threshold);
    let masks = chosen.iter().map(|(i, _)| session.mask_for(&i.original_text)).collect();
    let meta = chosen
        .iter()
        .map(|(i, _)| (slug_or_fallback(&i.privacy_type), i.privacy_level))
        .collect();
    build(message, &chosen, masks, meta, Strategy::UntypedPlaceholder, skipped)
}

/// The unprotected baseline: text goes out unchanged.
pub fn passthrough(message: &str) -> SanitizedMessage {
    SanitizedMessage {
        text: message.to_string(),
        applied: Vec::new(),
        strategy: Strategy::None,
        skipped: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::Strategy;
    use super::*;
    use proptest::prelude::*;
    use proptest::strategy::Strategy as _;
    use PrivacyLevel::*;

    fn item(t: &str, ty: &str, l: PrivacyLevel) -> PrivacyItem {
        PrivacyItem::new(t, ty, l)
    }

    #[test]
    fn typed_basic_and_threshold() {
        let store = MappingStore::in_memory();
        let items = [item("a@b.com", "Email", PL2)];
        let s = sanitize("u", "my email is a@b.com", &items, PL2, &store).unwrap();
        assert_eq!(s.text, "my email is <EMAIL_1>");
        assert_eq!(s.applied.len(), 1);
        assert_eq!(s.applied[0].occurrence_count, 1);
        let s = sanitize("u", "my email is a@b.com", &items, PL3, &store).unwrap();
        assert_eq!(s.text, "my email is a@b.com");
        assert!(s.applied.is_empty());
    }

    #[test]
    fn nested_spans_longest_first() {
        let store = MappingStore::in_memory();
        let msg = "I live at Haidian District, Beijing";
        let items = [
            item("Beijing", "Detailed Address", PL2),
            item("Haidian District, Beijing", "Detailed Address", PL2),
        ];
        let s = sanitize("u", msg, &items, PL2, &store).unwrap();
        assert_eq!(s.text, "I live at <DETAILED_ADDRESS_1>");
        assert_eq!(
            store
                .lookup_by_placeholder("u", "<DETAILED_ADDRESS_1>")
                .unwrap()
                .unwrap(),
            "Haidian District, Beijing"
        );
        let inner = s.applied.iter().find(|a| a.original_value == "Beijing").unwrap();
        assert_eq!(inner.occurrence_count, 0);

        // Shortest-first would splice the short placeholder into the long value and leave it unmatched.
        let wrong = msg.replace("Beijing", "<DETAILED_ADDRESS_2>");
        assert!(!wrong.contains("Haidian District, Beijing"));
        assert!(wrong.contains("Haidian District"));
    }

    #[test]
    fn repeated_value() {
        let store = MappingStore::in_memory();
        let s = sanitize("u", "a@b.com or a@b.com", &[item("a@b.com", "Email", PL2)], PL2, &store).unwrap();
        assert_eq!(s.text, "<EMAIL_1> or <EMAIL_1>");
        assert_eq!(s.applied[0].occurrence_count, 2);
    }

    #[test]
    fn first_seen_type_wins() {
        let store = MappingStore::in_memory();
        sanitize("u", "x 12345", &[item("12345", "Verification Code", PL4)], PL2, &store).unwrap();
        let s = sanitize("u", "y 12345", &[item("12345", "Phone Number", PL2)], PL2, &store).unwrap();
        assert_eq!(s.text, "y <VERIFICATION_CODE_1>");
        assert_eq!(s.applied[0].type_slug, "VERIFICATION_CODE");
    }

    #[test]
    fn skipped_items_are_reported() {
        let store = MappingStore::in_memory();
        let s = sanitize("u", "hello", &[item("ghost", "Email", PL2)], PL2, &store).unwrap();
        assert_eq!(s.text, "hello");
        assert_eq!(s.skipped.len(), 1);
    }

    #[test]
    fn irreversible() {
        let s = sanitize_irreversible("pwd is hunter2", &[item("hunter2", "Password", PL4)], PL2);
        assert_eq!(s.text, "pwd is ***");
        assert_eq!(sanitize_irreversible("plain", &[], PL2).text, "plain");
        let s = sanitize_irreversible(
            "a@b.io and 13800138000",
            &[item("a@b.io", "Email", PL2), item("13800138000", "Phone Number", PL2)],
            PL2,
        );
        assert_eq!(s.text, "*** and ***");
        assert_eq!(s.strategy, Strategy::Irreversible);
    }

    #[test]
    fn untyped() {
        let mut session = UntypedSession::new();
        let items = [item("13800138000", "Phone Number", PL2), item("a@b.io", "Email", PL2)];
        let s = sanitize_untyped("a@b.io then 13800138000 then a@b.io", &items, PL2, &mut session);
        assert_eq!(s.text, "<Mask_1> then <Mask_2> then <Mask_1>");
        let s = sanitize_untyped("only 13800138000", &items, PL2, &mut session);
        assert_eq!(s.text, "only <Mask_2>");
        let s = sanitize_untyped("a@b.io", &items, PL3, &mut UntypedSession::new());
        assert_eq!(s.text, "a@b.io");
    }

    #[test]
    fn partial_overlap_does_not_leak() {
        let store = MappingStore::in_memory();
        let items = [item("cab", "Key", PL4), item("aba", "Key", PL4)];
        let s = sanitize("u", "cababa", &items, PL2, &store).unwrap();
        assert_eq!(s.text, "<KEY_1><KEY_2>");
        assert!(!s.text.contains("aba") && !s.text.contains("cab"));
    }

    #[test]
    fn strategy_names() {
        for s in Strategy::ALL {
            assert_eq!(s.short_name().parse::<Strategy>().unwrap(), s);
        }
        assert_eq!(
            "typed_reversible".parse::<Strategy>().unwrap(),
            Strategy::TypedReversible
        );
        assert_eq!(
            serde_json::to_string(&Strategy::UntypedPlaceholder).unwrap(),
            "\"untyped_placeholder\""
        );
        assert!("masked".parse::<Strategy>().is_err());
    }

    fn scenario() -> impl proptest::strategy::Strategy<Value = (String, Vec<PrivacyItem>)> {
        let values = prop::collection::vec("[a-z0-9@.]{1,6}", 1..6);
        let fillers = prop::collection::vec("[ a-z,]{0,5}", 1..8);
        let levels = prop::collection::vec(prop::sample::select(PrivacyLevel::EXTRACTABLE.to_vec()), 6);
        (values, fillers, levels).prop_map(|(values, fillers, levels)| {
            let mut msg = String::new();
            for (i, f) in fillers.iter().enumerate() {
                msg.push_str(f);
                msg.push_str(&values[i % values.len()]);
            }
            let items = values
                .iter()
                .enumerate()
                .map(|(i, v)| PrivacyItem::new(v.clone(), "Key", levels[i]))
                .collect();
            (msg, items)
        })
    }

    proptest! {
        #[test]
        fn no_residual_leakage((msg, items) in scenario(), t in prop::sample::select(PrivacyLevel::EXTRACTABLE.to_vec())) {
            let store = MappingStore::in_memory();
            let outs = [
                sanitize("u", &msg, &items, t, &store).unwrap(),
                sanitize_irreversible(&msg, &items, t),
                sanitize_untyped(&msg, &items, t, &mut UntypedSession::new()),
            ];
            for out in &outs {
                for it in items.iter().filter(|i| i.privacy_level >= t) {
                    let v = &it.original_text;
                    let in_scope = if out.strategy == Strategy::TypedReversible {
                        !within_placeholder_alphabet(v)
                    } else {
                        // `***` and `<Mask_N>` are built from these characters.
                        !v.chars().all(|c| "<>_askM0123456789*".contains(c))
                    };
                    if in_scope {
                        prop_assert!(!out.text.contains(&it.original_text), "{:?} leaked in {:?}", it.original_text, out.text);
                    }
                }
            }
        }

        #[test]
        fn threshold_monotone_and_deterministic((msg, items) in scenario()) {
            let mut prev: Option<HashSet<String>> = None;
            for t in PrivacyLevel::EXTRACTABLE {
                let a = sanitize("u", &msg, &items, t, &MappingStore::in_memory()).unwrap();
                let b = sanitize("u", &msg, &items, t, &MappingStore::in_memory()).unwrap();
                prop_assert_eq!(&a, &b);
                let set: HashSet<String> = a.applied.iter().map(|x| x.original_value.clone()).collect();
                if let Some(p) = &prev {
                    prop_assert!(set.is_subset(p));
                }
                prev = Some(set);
            }
        }

        #[test]
        fn clean_input_unchanged(msg in "[ a-z]{0,30}") {
            let items = [PrivacyItem::new("Q@Q", "Email", PL2)];
            prop_assert_eq!(sanitize("u", &msg, &items, PL2, &MappingStore::in_memory()).unwrap().text, msg.clone());
            prop_assert_eq!(sanitize_irreversible(&msg, &items, PL2).text, msg.clone());
        }
    }
}
