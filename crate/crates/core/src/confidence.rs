//! Confidence of a sequence as the geometric mean of its least likely tokens.
//!
//! Only the bottom `fraction` of positions by probability (at least one)
//! enters the mean, so near-certain tokens do not dilute the score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{PolicyParams, TokenId};

pub const DEFAULT_FRACTION: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceReport {
    pub low_positions: Vec<usize>,
    pub confidence: f64,
    pub fraction: f64,
    pub length: usize,
}

fn check_fraction(fraction: f64) -> Result<()> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "fraction must lie in (0, 1], got {fraction}"
        )));
    }
    Ok(())
}

/// `max(1, ceil(fraction · n))`, robust to products like `0.7 · 10`
/// landing one ulp above an integer.
pub fn low_position_count(n: usize, fraction: f64) -> usize {
    let raw = fraction * n as f64;
    let k = (raw - 1e-9 * raw.max(1.0)).ceil() as usize;
    k.clamp(1, n.max(1))
}

/// Indices of the `k` smallest probabilities, ties to the smaller index,
/// returned in ascending order.
pub fn select_low_prob_positions(step_probs: &[f64], fraction: f64) -> Result<Vec<usize>> {
    if step_probs.is_empty() {
        return Err(Error::InvalidArgument("cannot select from an empty sequence".into()));
    }
    check_fraction(fraction)?;
    let k = low_position_count(step_probs.len(), fraction);
    let mut order: Vec<usize> = (0..step_probs.len()).collect();
    order.sort_by(|&a, &b| step_probs[a].total_cmp(&step_probs[b]).then(a.cmp(&b)));
    let mut picked = order[..k].to_vec();
    picked.sort_unstable();
    Ok(picked)
}

pub fn sequence_confidence(step_logprobs: &[f64], fraction: f64) -> Result<ConfidenceReport> {
    if step_logprobs.iter().any(|l| l.is_nan() || *l > 0.0) {
        return Err(Error::InvalidArgument("log-probabilities must be <= 0".into()));
    }
    let probs: Vec<f64> = step_logprobs.iter().map(|l| l.exp()).collect();
    let low_positions = select_low_prob_positions(&probs, fraction)?;
    let mean = low_positions.iter().map(|&i| step_logprobs[i]).sum::<f64>() / low_positions.len() as f64;
    Ok(ConfidenceReport {
        low_positions,
        confidence: mean.exp(),
        fraction,
        length: step_logprobs.len(),
    })
}

/// Confidence of the policy in the prompt itself, scored from the start.
pub fn prompt_confidence(params: &PolicyParams, prompt: &[TokenId], fraction: f64) -> Result<ConfidenceReport> {
    sequence_confidence(&params.score_sequence(&[], prompt)?, fraction)
}

/// Confidence of the policy in `response` given `prompt`.
pub fn answer_confidence(
    params: &PolicyParams,
    prompt: &[TokenId],
    response: &[TokenId],
    fraction: f64,
) -> Result<ConfidenceReport> {
    sequence_confidence(&params.score_sequence(prompt, response)?, fraction)
}
