//! Evaluation metrics.
//!
//! * extraction scoring: greedy one-to-one matching of predicted and gold
//!   privacy items over text, level and type sub-scores;
//! * generation metrics for QA answers: BLEU-1/2, METEOR, ROUGE-L;
//! * residual leakage, signed utility loss, and group reward normalization.
//!
//! All token-level metrics share [`tokenize`].

mod extraction;
mod generation;
mod outcome;
mod tokenize;

pub(crate) use extraction::harmonic;
pub use extraction::{
    cosine_similarity, longest_common_token_run, score_extraction, text_score, ExtractionScore, PairScore,
    TrigramEmbedder, TypeEmbedder,
};
pub use generation::{bleu_n, lcs_len, meteor, meteor_chunks, rouge_l};
pub use outcome::{format_delta, group_normalize_rewards, residual_leakage, table_delta, utility_loss, RewardError};
pub use tokenize::{is_cjk_ideograph, tokenize};
