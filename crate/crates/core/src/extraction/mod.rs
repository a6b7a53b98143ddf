//! Privacy-span extractors and the extraction output parser.

mod parse;
mod remote;
mod rules;

use thiserror::Error;

use crate::corpus::PrivacyItem;

pub use parse::{parse_extraction_output, ParseError};
pub use remote::{build_prompt, ChatEndpoint, RemoteExtractor, RemoteExtractorConfig, PROMPT_EN, PROMPT_ZH};
pub use rules::{extract_rules, is_unknown_name, rule_matches, PatternClass, RuleMatch};

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("could not parse extractor reply: {error}")]
    Parse { error: ParseError, raw: String },
    #[error("invalid extractor config: {0}")]
    Config(String),
}

pub trait Extractor: Send + Sync {
    fn extract(&self, message: &str, real_name: Option<&str>) -> Result<Vec<PrivacyItem>, ExtractError>;
}

/// The deterministic pattern extractor.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleExtractor;

impl Extractor for RuleExtractor {
    fn extract(&self, message: &str, real_name: Option<&str>) -> Result<Vec<PrivacyItem>, ExtractError> {
        Ok(extract_rules(message, real_name))
    }
}

impl<E: Extractor + ?Sized> Extractor for Box<E> {
    fn extract(&self, message: &str, real_name: Option<&str>) -> Result<Vec<PrivacyItem>, ExtractError> {
        (**self).extract(message, real_name)
    }
}

impl<E: Extractor + ?Sized> Extractor for std::sync::Arc<E> {
    fn extract(&self, message: &str, real_name: Option<&str>) -> Result<Vec<PrivacyItem>, ExtractError> {
        (**self).extract(message, real_name)
    }
}

/// Drops items that are not exact substrings of `message` (or are empty).
/// Returns the kept items and the number dropped.
pub fn retain_substrings(message: &str, items: Vec<PrivacyItem>) -> (Vec<PrivacyItem>, usize) {
    let before = items.len();
    let kept: Vec<PrivacyItem> = items
        .into_iter()
        .filter(|i| !i.original_text.is_empty() && message.contains(&i.original_text))
        .collect();
    let dropped = before - kept.len();
    (kept, dropped)
}

/// Runs `extractor` over `inputs` with at most `max_in_flight` calls at once.
/// Output order matches input order; each message fails independently.
pub fn extract_batch<E: Extractor + ?Sized>(
    extractor: &E,
    inputs: &[(&str, Option<&str>)],
    max_in_flight: usize,
) -> Vec<Result<Vec<PrivacyItem>, ExtractError>> {
    crate::par::parallel_map(inputs.len(), max_in_flight, |i| {
        extractor.extract(inputs[i].0, inputs[i].1)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::PrivacyLevel;
    use proptest::prelude::*;

    #[test]
    fn substring_filter() {
        let items = vec![
            PrivacyItem::new("abc", "Email", PrivacyLevel::PL2),
            PrivacyItem::new("zzz", "Email", PrivacyLevel::PL2),
            PrivacyItem::new("", "Email", PrivacyLevel::PL2),
        ];
        let (kept, dropped) = retain_substrings("xxabcxx", items);
        assert_eq!(kept.len(), 1);
        assert_eq!(dropped, 2);
    }

    #[test]
    fn batch_preserves_order() {
        let msgs = ["mail a@b.io", "nothing", "call 13800138000"];
        let inputs: Vec<_> = msgs.iter().map(|m| (*m, None)).collect();
        let out = extract_batch(&RuleExtractor, &inputs, 2);
        let counts: Vec<usize> = out.iter().map(|r| r.as_ref().unwrap().len()).collect();
        assert_eq!(counts, [1, 0, 1]);
    }

    fn message_strategy() -> impl Strategy<Value = String> {
        let pieces = prop::sample::select(vec![
            "my phone is ",
            "13800138000",
            " mail ",
            "ops@example.com",
            " code ",
            "4821",
            "验证码",
            "192.168.0.1",
            " card ",
            "4111111111111111",
            "postgres://u:p@h/db",
            "Zhang San",
            " ",
            ", ",
            "。",
            "123",
            "abc",
            "sk-9fJ2kLq8Zx7VbN3mP4tR6wY1",
            "110105194912310021",
        ]);
        prop::collection::vec(pieces, 0..12).prop_map(|v| v.concat())
    }

    proptest! {
        #[test]
        fn rules_are_substrings_pure_and_non_overlapping(msg in message_strategy(), noise in "\\PC{0,20}") {
            let msg = format!("{msg}{noise}");
            let a = rule_matches(&msg, Some("Zhang San"));
            let b = rule_matches(&msg, Some("Zhang San"));
            prop_assert_eq!(&a, &b);
            for m in &a {
                prop_assert!(msg.is_char_boundary(m.span.start) && msg.is_char_boundary(m.span.end));
                prop_assert!(m.class.level() != PrivacyLevel::PL1);
            }
            for (i, x) in a.iter().enumerate() {
                for y in &a[i + 1..] {
                    if x.class == y.class {
                        prop_assert!(x.span.end <= y.span.start || y.span.end <= x.span.start);
                    }
                }
            }
            prop_assert!(a.windows(2).all(|w| w[0].span.start <= w[1].span.start));
            for item in extract_rules(&msg, Some("Zhang San")) {
                prop_assert!(msg.contains(&item.original_text));
            }
        }
    }
}
