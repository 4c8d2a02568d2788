//! Clipped surrogate and REINFORCE losses with analytic gradients.

use serde::{Deserialize, Serialize};

use super::RolloutGroup;
use crate::error::{Error, Result};
use crate::policy::{ParamGrad, PolicyParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClipConfig {
    pub eps_low: f64,
    pub eps_high: f64,
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self {
            eps_low: 0.2,
            eps_high: 0.28,
        }
    }
}

impl ClipConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_low > 0.0 && self.eps_low < 1.0) {
            return Err(Error::config("train.clip.eps_low", "must lie in (0, 1)"));
        }
        if !(self.eps_high > 0.0 && self.eps_high.is_finite()) {
            return Err(Error::config("train.clip.eps_high", "must be positive"));
        }
        Ok(())
    }

    pub fn lower(&self) -> f64 {
        1.0 - self.eps_low
    }

    pub fn upper(&self) -> f64 {
        1.0 + self.eps_high
    }

    pub fn clip(&self, ratio: f64) -> f64 {
        ratio.clamp(self.lower(), self.upper())
    }
}

/// How per-token terms are averaged inside a group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Divide the group's token sum by the group's total token count.
    TokenGlobal,
    /// Average tokens within each sequence, then sequences within the group.
    PerSequence,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossEval {
    pub loss: f64,
    /// Gradient of `loss` (descent direction is its negative).
    pub grad: ParamGrad,
    pub clipped_tokens: usize,
    pub total_tokens: usize,
}

fn token_weights(group: &RolloutGroup, normalization: Normalization) -> Vec<f64> {
    let g = group.rollouts.len() as f64;
    let total: usize = group.rollouts.iter().map(|r| r.len()).sum();
    group
        .rollouts
        .iter()
        .map(|r| match normalization {
            Normalization::TokenGlobal => 1.0 / total as f64,
            Normalization::PerSequence => 1.0 / (g * r.len() as f64),
        })
        .collect()
}

/// Negated clipped surrogate, summed over groups.
///
/// `advantages[g][i]` is the (frozen) advantage of rollout `i` in group `g`.
/// Each rollout must carry the sampling policy's log-probabilities.
pub fn surrogate_loss_and_grad(
    params: &PolicyParams,
    groups: &[RolloutGroup],
    advantages: &[Vec<f64>],
    clip: &ClipConfig,
    normalization: Normalization,
) -> Result<LossEval> {
    if groups.len() != advantages.len() {
        return Err(Error::InvalidArgument("one advantage vector per group required".into()));
    }
    let mut grad = ParamGrad::new(params.vocab_size());
    if groups.is_empty() {
        return Ok(LossEval {
            loss: 0.0,
            grad,
            clipped_tokens: 0,
            total_tokens: 0,
        });
    }
    let mut objective = 0.0;
    let mut clipped_tokens = 0;
    let mut total_tokens = 0;
    for (group, adv) in groups.iter().zip(advantages) {
        if adv.len() != group.rollouts.len() {
            return Err(Error::InvalidArgument("advantage count differs from group size".into()));
        }
        let weights = token_weights(group, normalization);
        let mut group_sum = 0.0;
        for ((rollout, &a), &w) in group.rollouts.iter().zip(adv).zip(&weights) {
            if rollout.step_logprobs.len() != rollout.response.len() || rollout.response.is_empty() {
                return Err(Error::InvalidArgument(
                    "rollout is missing sampling-policy log-probabilities".into(),
                ));
            }
            let mut history = rollout.prompt.clone();
            let mut seq_sum = 0.0;
            for (&tok, &old_lp) in rollout.response.iter().zip(&rollout.step_logprobs) {
                let ctx = params.context(&history);
                let lp = params.next_token_logprobs(&ctx)?;
                let ratio = (lp[tok as usize] - old_lp).exp();
                let unclipped = ratio * a;
                let clipped = clip.clip(ratio) * a;
                total_tokens += 1;
                if unclipped <= clipped {
                    seq_sum += unclipped;
                    let probs: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
                    grad.accumulate_log_prob(&ctx, &probs, tok, -w * a * ratio);
                } else {
                    seq_sum += clipped;
                    clipped_tokens += 1;
                }
                history.push(tok);
            }
            group_sum += w * seq_sum;
        }
        objective += group_sum;
    }
    Ok(LossEval {
        loss: -objective,
        grad,
        clipped_tokens,
        total_tokens,
    })
}

/// `−(1/N) Σ_τ R(τ) Σ_t log π(τ_t)` over all rollouts in `groups`.
pub fn reinforce_loss_and_grad(params: &PolicyParams, groups: &[RolloutGroup]) -> Result<LossEval> {
    let mut grad = ParamGrad::new(params.vocab_size());
    let n: usize = groups.iter().map(|g| g.rollouts.len()).sum();
    let mut total = 0.0;
    let mut total_tokens = 0;
    for group in groups {
        for (rollout, &reward) in group.rollouts.iter().zip(&group.rewards) {
            total_tokens += rollout.len();
            if reward == 0 {
                continue;
            }
            let r = f64::from(reward);
            let mut history = rollout.prompt.clone();
            for &tok in &rollout.response {
                let ctx = params.context(&history);
                let lp = params.next_token_logprobs(&ctx)?;
                total += r * lp[tok as usize];
                let probs: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
                grad.accumulate_log_prob(&ctx, &probs, tok, -r / n as f64);
                history.push(tok);
            }
        }
    }
    Ok(LossEval {
        loss: if n == 0 { 0.0 } else { -total / n as f64 },
        grad,
        clipped_tokens: 0,
        total_tokens,
    })
}
