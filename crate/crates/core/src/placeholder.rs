//! Typed placeholder grammar: `<SLUG_N>`, SLUG = `[A-Z][A-Z0-9_]*`, N = `[1-9][0-9]*`.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PLACEHOLDER_PATTERN: &str = r"<[A-Z][A-Z0-9_]*_[1-9][0-9]*>";

static PLACEHOLDER_RE: Lazy<Regex> =
    Lazy::new(|| Regex::new(PLACEHOLDER_PATTERN).expect("placeholder pattern compiles"));

static ANCHORED_RE: Lazy<Regex> =
    Lazy::new(|| Regex::new(&format!("^{PLACEHOLDER_PATTERN}$")).expect("placeholder pattern compiles"));

/// Characters a typed placeholder can be built from.
pub fn is_placeholder_char(c: char) -> bool {
    c.is_ascii_uppercase() || c.is_ascii_digit() || matches!(c, '_' | '<' | '>')
}

/// True when every character of `s` could appear inside a placeholder.
pub fn within_placeholder_alphabet(s: &str) -> bool {
    s.chars().all(is_placeholder_char)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed placeholder {0:?}: expected <SLUG_N>")]
pub struct GrammarError(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Placeholder {
    slug: String,
    index: u64,
}

impl Placeholder {
    /// `slug` must already be a valid slug (see [`crate::taxonomy::slugify_type`]).
    pub fn new(slug: &str, index: u64) -> Result<Self, GrammarError> {
        let p = Self {
            slug: slug.to_string(),
            index,
        };
        if index == 0 || !ANCHORED_RE.is_match(&p.to_string()) {
            return Err(GrammarError(p.to_string()));
        }
        Ok(p)
    }

    pub fn slug(&self) -> &str {
        &self.slug
    }

    pub fn index(&self) -> u64 {
        self.index
    }
}

impl fmt::Display for Placeholder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}_{}>", self.slug, self.index)
    }
}

impl FromStr for Placeholder {
    type Err = GrammarError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if !ANCHORED_RE.is_match(s) {
            return Err(GrammarError(s.to_string()));
        }
        // The index is everything after the last underscore; the slug may itself contain `_N`.
        let inner = &s[1..s.len() - 1];
        let split = inner.rfind('_').ok_or_else(|| GrammarError(s.to_string()))?;
        let index = inner[split + 1..]
            .parse::<u64>()
            .map_err(|_| GrammarError(s.to_string()))?;
        Ok(Self {
            slug: inner[..split].to_string(),
            index,
        })
    }
}

impl Serialize for Placeholder {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Placeholder {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Left-to-right, non-overlapping grammar matches in `text`.
pub fn find_placeholders(text: &str) -> impl Iterator<Item = (Range<usize>, &str)> + '_ {
    PLACEHOLDER_RE.find_iter(text).map(|m| (m.range(), m.as_str()))
}

pub fn contains_placeholder(text: &str) -> bool {
    PLACEHOLDER_RE.is_match(text)
}
