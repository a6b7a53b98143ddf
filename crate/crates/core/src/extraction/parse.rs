use serde_json::Value;
use thiserror::Error;

use crate::corpus::PrivacyItem;
use crate::taxonomy::PrivacyLevel;

const FIELDS: [&str; 3] = ["original_text", "privacy_type", "privacy_level"];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("no JSON array found in extractor output")]
    NoArray,
    #[error("element at index {index} is not an object")]
    NotAnObject { index: usize },
    #[error("missing field {field:?} at index {index}")]
    MissingField { index: usize, field: &'static str },
    #[error("unexpected field {field:?} at index {index}")]
    UnexpectedField { index: usize, field: String },
    #[error("field {field:?} at index {index} must be a non-empty string")]
    BadField { index: usize, field: &'static str },
    #[error("invalid level at index {index}: {literal:?}")]
    InvalidLevel { index: usize, literal: String },
}

/// First well-formed top-level JSON array in `raw`, tolerating surrounding
/// prose and code fences.
fn first_array(raw: &str) -> Option<Vec<Value>> {
    for (start, _) in raw.match_indices('[') {
        let mut stream = serde_json::Deserializer::from_str(&raw[start..]).into_iter::<Value>();
        if let Some(Ok(Value::Array(items))) = stream.next() {
            return Some(items);
        }
    }
    None
}

/// Parses an extractor reply into privacy items.
///
/// Each element must carry exactly `original_text`, `privacy_type` and
/// `privacy_level`; levels are case-insensitive and limited to PL2..PL4.
pub fn parse_extraction_output(raw: &str) -> Result<Vec<PrivacyItem>, ParseError> {
    let items = first_array(raw).ok_or(ParseError::NoArray)?;
    items
        .into_iter()
        .enumerate()
        .map(|(index, v)| {
            let Value::Object(obj) = v else {
                return Err(ParseError::NotAnObject { index });
            };
            for field in FIELDS {
                if !obj.contains_key(field) {
                    return Err(ParseError::MissingField { index, field });
                }
            }
            if let Some(extra) = obj.keys().find(|k| !FIELDS.contains(&k.as_str())) {
                return Err(ParseError::UnexpectedField {
                    index,
                    field: extra.clone(),
                });
            }
            let text_field = |field: &'static str| match obj.get(field) {
                Some(Value::String(s)) if !s.is_empty() => Ok(s.clone()),
                _ => Err(ParseError::BadField { index, field }),
            };
            let original_text = text_field("original_text")?;
            let privacy_type = text_field("privacy_type")?;
            let literal = text_field("privacy_level").map_err(|_| ParseError::InvalidLevel {
                index,
                literal: obj["privacy_level"].to_string(),
            })?;
            let privacy_level =
                PrivacyLevel::parse_extractable(&literal).map_err(|_| ParseError::InvalidLevel { index, literal })?;
            Ok(PrivacyItem {
                original_text,
                privacy_type,
                privacy_level,
            })
        })
        .collect()
}
