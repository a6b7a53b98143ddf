//! Privacy levels, type tags, and default handling policies.
//!
//! The four levels are totally ordered by sensitivity. Level 1 is an exclusion
//! class: extractors never emit it, and it exists here only so that policies and
//! thresholds can be expressed over the full range.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use once_cell::sync::Lazy;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slug used when a type label has no ASCII alphanumerics (e.g. a label written in Chinese).
pub const FALLBACK_SLUG: &str = "PRIVATE";

const REGISTRY_JSON: &str = include_str!("../data/taxonomy.json");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("invalid privacy level literal {0:?}")]
    InvalidLevel(String),
    #[error("type label {0:?} has no ASCII alphanumeric characters")]
    EmptySlug(String),
    #[error("registry parse error: {0}")]
    Registry(String),
    #[error("duplicate slug {slug:?} for labels {first:?} and {second:?}")]
    DuplicateSlug {
        slug: String,
        first: String,
        second: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum PrivacyLevel {
    PL1,
    PL2,
    PL3,
    PL4,
}

impl PrivacyLevel {
    pub const ALL: [PrivacyLevel; 4] = [Self::PL1, Self::PL2, Self::PL3, Self::PL4];
    /// Levels an extractor is allowed to emit.
    pub const EXTRACTABLE: [PrivacyLevel; 3] = [Self::PL2, Self::PL3, Self::PL4];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::PL1 => "PL1",
            Self::PL2 => "PL2",
            Self::PL3 => "PL3",
            Self::PL4 => "PL4",
        }
    }

    pub fn is_extractable(self) -> bool {
        self != Self::PL1
    }

    /// Parses an extraction-output level: case-insensitive, PL2..PL4 only.
    pub fn parse_extractable(s: &str) -> Result<Self, TaxonomyError> {
        match s.parse::<Self>()? {
            Self::PL1 => Err(TaxonomyError::InvalidLevel(s.to_string())),
            level => Ok(level),
        }
    }
}

impl fmt::Display for PrivacyLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PrivacyLevel {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "PL1" => Ok(Self::PL1),
            "PL2" => Ok(Self::PL2),
            "PL3" => Ok(Self::PL3),
            "PL4" => Ok(Self::PL4),
            _ => Err(TaxonomyError::InvalidLevel(s.to_string())),
        }
    }
}

impl<'de> Deserialize<'de> for PrivacyLevel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Whether text at a level may be kept in long-term memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryPermission {
    /// Allowed, with minimization and user-revocable deletion.
    Permitted,
    /// Off unless a business need justifies controlled storage.
    DisallowedByDefault,
    NotPermitted,
    /// Never stored anywhere, including logs.
    Prohibited,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PolicyRule {
    pub level: PrivacyLevel,
    pub long_term_memory_allowed: bool,
    pub memory_permission: MemoryPermission,
    pub default_storage: &'static str,
    pub default_model_behavior: &'static str,
}

/// The canonical default handling rule for `level`.
pub fn default_policy(level: PrivacyLevel) -> PolicyRule {
    match level {
        PrivacyLevel::PL1 => PolicyRule {
            level,
            long_term_memory_allowed: true,
            memory_permission: MemoryPermission::Permitted,
            default_storage: "store preference summaries or derived features; avoid keeping \
                traceable raw utterances; support one-step deletion",
            default_model_behavior: "use for personalization; do not turn inferred traits into \
                asserted facts",
        },
        PrivacyLevel::PL2 => PolicyRule {
            level,
            long_term_memory_allowed: false,
            memory_permission: MemoryPermission::DisallowedByDefault,
            default_storage: "only in controlled systems with encryption, access control and \
                audit; retrieval indexes keep references instead of raw text",
            default_model_behavior: "do not repeat verbatim; confirm with the user and \
                de-identify when use is necessary",
        },
        PrivacyLevel::PL3 => PolicyRule {
            level,
            long_term_memory_allowed: false,
            memory_permission: MemoryPermission::NotPermitted,
            default_storage: "controlled storage only with a clear legal basis; field-level \
                encryption, strict minimization and auditing",
            default_model_behavior: "do not collect by default; mask key fields and warn the \
                user about the risk",
        },
        PrivacyLevel::PL4 => PolicyRule {
            level,
            long_term_memory_allowed: false,
            memory_permission: MemoryPermission::Prohibited,
            default_storage: "never written to databases, memory or logs; redact or block on \
                detection; never placed in model context",
            default_model_behavior: "refuse collection/storage/disclosure; advise credential \
                rotation and incident escalation",
        },
    }
}

/// Uppercase identifier for a type label.
///
/// Each maximal run of characters outside `[A-Za-z0-9]` becomes a single `_`,
/// edge underscores are dropped, and a leading digit gets a `T_` prefix.
pub fn slugify_type(label: &str) -> Result<String, TaxonomyError> {
    let mut slug = String::with_capacity(label.len());
    let mut pending_sep = false;
    for ch in label.chars() {
        if ch.is_ascii_alphanumeric() {
            if pending_sep && !slug.is_empty() {
                slug.push('_');
            }
            pending_sep = false;
            slug.push(ch.to_ascii_uppercase());
        } else {
            pending_sep = true;
        }
    }
    if slug.is_empty() {
        return Err(TaxonomyError::EmptySlug(label.to_string()));
    }
    if slug.as_bytes()[0].is_ascii_digit() {
        slug.insert_str(0, "T_");
    }
    Ok(slug)
}

/// [`slugify_type`], falling back to [`FALLBACK_SLUG`].
pub fn slug_or_fallback(label: &str) -> String {
    slugify_type(label).unwrap_or_else(|_| FALLBACK_SLUG.to_string())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrivacyTypeTag {
    pub label: String,
    pub slug: String,
    /// Level the tag is usually found at.
    pub level: PrivacyLevel,
    /// Exact-match-only text scoring.
    pub strict: bool,
}

#[derive(Deserialize)]
struct RegistryFile {
    tags: Vec<PrivacyTypeTag>,
}

/// Queryable registry of type tags.
///
/// Lookups go through the slug, so any spelling that slugifies the same way
/// ("phone number", "Phone-Number") resolves to the same tag.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    tags: Vec<PrivacyTypeTag>,
    by_slug: HashMap<String, usize>,
}

static CANONICAL: Lazy<Taxonomy> =
    Lazy::new(|| Taxonomy::from_json(REGISTRY_JSON).expect("bundled taxonomy registry is valid"));

impl Taxonomy {
    /// The bundled 28-tag registry.
    pub fn canonical() -> &'static Taxonomy {
        &CANONICAL
    }

    pub fn from_json(json: &str) -> Result<Self, TaxonomyError> {
        let file: RegistryFile = serde_json::from_str(json).map_err(|e| TaxonomyError::Registry(e.to_string()))?;
        Self::from_tags(file.tags)
    }

    pub fn from_tags(tags: Vec<PrivacyTypeTag>) -> Result<Self, TaxonomyError> {
        let mut by_slug: HashMap<String, usize> = HashMap::new();
        for (i, tag) in tags.iter().enumerate() {
            let expected = slugify_type(&tag.label)?;
            if expected != tag.slug {
                return Err(TaxonomyError::Registry(format!(
                    "tag {:?} has slug {:?}, expected {:?}",
                    tag.label, tag.slug, expected
                )));
            }
            if let Some(&prev) = by_slug.get(&tag.slug) {
                return Err(TaxonomyError::DuplicateSlug {
                    slug: tag.slug.clone(),
                    first: tags[prev].label.clone(),
                    second: tag.label.clone(),
                });
            }
            by_slug.insert(tag.slug.clone(), i);
        }
        Ok(Self { tags, by_slug })
    }

    pub fn tags(&self) -> &[PrivacyTypeTag] {
        &self.tags
    }

    pub fn get(&self, label: &str) -> Option<&PrivacyTypeTag> {
        let slug = slugify_type(label).ok()?;
        self.by_slug.get(&slug).map(|&i| &self.tags[i])
    }

    /// Strictness of a label; labels outside the registry are never strict.
    pub fn is_strict(&self, label: &str) -> bool {
        self.get(label).is_some_and(|t| t.strict)
    }

    /// Replaces the strict flag on every tag: strict iff its slug is in `slugs`.
    pub fn with_strict_set<I, S>(mut self, slugs: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let set: Vec<String> = slugs.into_iter().map(|s| slug_or_fallback(s.as_ref())).collect();
        for tag in &mut self.tags {
            tag.strict = set.contains(&tag.slug);
        }
        self
    }
}

impl Default for Taxonomy {
    fn default() -> Self {
        Self::canonical().clone()
    }
}
