//! Privacy-sanitizing gateway: local span extraction, typed reversible
//! placeholders, restoration of cloud replies, and the evaluation metrics
//! used to compare masking strategies.

pub mod corpus;
pub mod extraction;
pub mod gateway;
pub mod metrics;
mod par;
pub mod placeholder;
pub mod restorer;
pub mod sanitizer;
pub mod store;
pub mod taxonomy;

pub use corpus::{Corpus, PrivacyItem};
pub use placeholder::Placeholder;
pub use taxonomy::{PrivacyLevel, Taxonomy};
