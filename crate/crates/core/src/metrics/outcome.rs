use thiserror::Error;

use crate::corpus::PrivacyItem;
use crate::taxonomy::PrivacyLevel;

/// Fraction of gold items at or above `threshold` whose text still occurs
/// verbatim in `sanitized_text`. Zero when no item qualifies.
pub fn residual_leakage(sanitized_text: &str, gold_items: &[PrivacyItem], threshold: PrivacyLevel) -> f64 {
    let (leaked, total) = gold_items
        .iter()
        .filter(|g| g.privacy_level >= threshold)
        .fold((0usize, 0usize), |(l, t), g| {
            (l + usize::from(sanitized_text.contains(&g.original_text)), t + 1)
        });
    if total == 0 {
        0.0
    } else {
        leaked as f64 / total as f64
    }
}

/// Signed utility loss: ideal score minus protected-pipeline score.
pub fn utility_loss(u_ideal: f64, u_hat: f64) -> f64 {
    u_ideal - u_hat
}

/// Change relative to the unprotected baseline, as printed in result tables
/// (negative when protection costs utility).
pub fn table_delta(u_ideal: f64, u_hat: f64) -> f64 {
    -utility_loss(u_ideal, u_hat)
}

/// `(+0.00)` / `(-1.30)` rendering of a delta, two decimals, zero always positive.
pub fn format_delta(delta: f64) -> String {
    let rounded = (delta * 100.0).round() / 100.0;
    if rounded == 0.0 {
        "(+0.00)".to_string()
    } else {
        format!("({rounded:+.2})")
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RewardError {
    #[error("reward group is empty")]
    EmptyGroup,
    #[error("reward group contains a non-finite value")]
    NonFinite,
}

/// Group-relative advantages: `(r - mean) / std` with the population standard
/// deviation; a constant group maps to all zeros.
pub fn group_normalize_rewards(rewards: &[f64]) -> Result<Vec<f64>, RewardError> {
    if rewards.is_empty() {
        return Err(RewardError::EmptyGroup);
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(RewardError::NonFinite);
    }
    if rewards.iter().all(|&r| r == rewards[0]) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std == 0.0 {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}
