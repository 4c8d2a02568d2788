//! Group-normalized advantages and confidence-based re-weighting.
//!
//! Within a group of `G` rollouts for one prompt, the baseline advantage is
//! `A_i = (r_i − μ) / (σ + δ)` with the population standard deviation. The
//! re-weighted advantage adds an offset `α · (baseline − c_i)` where `c_i` is
//! the answer confidence and the baseline depends on [`ArmMode`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_DELTA: f64 = 1e-6;
pub const DEFAULT_ALPHA: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmMode {
    /// Pure GRPO: no offsets.
    Off,
    /// `c(q) − c(o|q)`.
    PromptMinusAnswer,
    /// `1 − c(o|q)`.
    OneMinusAnswer,
    /// `1 − c(q) − c(o|q)`.
    OneMinusBoth,
    /// `mean_j c(o_j|q) − c(o|q)`.
    GroupMeanMinusAnswer,
}

impl ArmMode {
    pub const ALL: [ArmMode; 5] = [
        ArmMode::Off,
        ArmMode::PromptMinusAnswer,
        ArmMode::OneMinusAnswer,
        ArmMode::OneMinusBoth,
        ArmMode::GroupMeanMinusAnswer,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ArmMode::Off => "off",
            ArmMode::PromptMinusAnswer => "prompt_minus_answer",
            ArmMode::OneMinusAnswer => "one_minus_answer",
            ArmMode::OneMinusBoth => "one_minus_both",
            ArmMode::GroupMeanMinusAnswer => "group_mean_minus_answer",
        }
    }

    /// Whether the offset reads the prompt confidence.
    pub fn uses_prompt_confidence(&self) -> bool {
        matches!(self, ArmMode::PromptMinusAnswer | ArmMode::OneMinusBoth)
    }
}

impl fmt::Display for ArmMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArmMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ArmMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown ARM mode {s:?}")))
    }
}

/// When re-weighting is skipped for a group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipRule {
    /// Skip only groups where every rollout failed.
    AllIncorrectOnly,
    /// Skip groups where every rollout failed or every rollout succeeded.
    BothDegenerate,
}

impl SkipRule {
    pub fn fires(&self, rewards: &[u8]) -> bool {
        let correct = rewards.iter().filter(|&&r| r == 1).count();
        match self {
            SkipRule::AllIncorrectOnly => correct == 0,
            SkipRule::BothDegenerate => correct == 0 || correct == rewards.len(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArmConfig {
    pub mode: ArmMode,
    pub alpha: f64,
    pub skip_rule: SkipRule,
}

impl Default for ArmConfig {
    fn default() -> Self {
        Self {
            mode: ArmMode::PromptMinusAnswer,
            alpha: DEFAULT_ALPHA,
            skip_rule: SkipRule::BothDegenerate,
        }
    }
}

impl ArmConfig {
    pub fn off() -> Self {
        Self {
            mode: ArmMode::Off,
            alpha: 0.0,
            skip_rule: SkipRule::BothDegenerate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("arm.alpha", format!("must be >= 0, got {}", self.alpha)));
        }
        Ok(())
    }

    /// True when offsets are identically zero.
    pub fn is_inert(&self) -> bool {
        self.mode == ArmMode::Off || self.alpha == 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdvantageVector {
    pub base: Vec<f64>,
    pub reweighted: Vec<f64>,
    pub skipped: bool,
    pub mean: f64,
    pub std: f64,
}

impl AdvantageVector {
    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }
}

fn check_rewards(rewards: &[u8]) -> Result<()> {
    if rewards.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "a group needs at least 2 rollouts, got {}",
            rewards.len()
        )));
    }
    if rewards.iter().any(|&r| r > 1) {
        return Err(Error::InvalidArgument("rewards must be binary".into()));
    }
    Ok(())
}

/// Baseline advantages. Correct rollouts share one value and incorrect ones
/// another, bit for bit. `reweighted` starts as a copy of `base`.
pub fn grpo_advantages(rewards: &[u8], delta: f64) -> Result<AdvantageVector> {
    check_rewards(rewards)?;
    if delta.is_nan() || delta <= 0.0 {
        return Err(Error::InvalidArgument(format!("delta must be positive, got {delta}")));
    }
    let g = rewards.len() as f64;
    let mean = rewards.iter().map(|&r| f64::from(r)).sum::<f64>() / g;
    let var = rewards
        .iter()
        .map(|&r| (f64::from(r) - mean).powi(2))
        .sum::<f64>()
        / g;
    let std = var.sqrt();
    let a_pos = (1.0 - mean) / (std + delta);
    let a_neg = (0.0 - mean) / (std + delta);
    let base: Vec<f64> = rewards.iter().map(|&r| if r == 1 { a_pos } else { a_neg }).collect();
    Ok(AdvantageVector {
        reweighted: base.clone(),
        base,
        skipped: false,
        mean,
        std,
    })
}

/// Per-rollout offsets for the configured mode. When the config is inert
/// the result is all `+0.0`.
pub fn arm_offsets(cfg: &ArmConfig, c_prompt: f64, c_answers: &[f64]) -> Result<Vec<f64>> {
    cfg.validate()?;
    let in_range = |c: f64| c > 0.0 && c <= 1.0;
    if c_answers.iter().any(|&c| !in_range(c)) {
        return Err(Error::InvalidArgument("answer confidences must lie in (0, 1]".into()));
    }
    if cfg.mode.uses_prompt_confidence() && !in_range(c_prompt) {
        return Err(Error::InvalidArgument("prompt confidence must lie in (0, 1]".into()));
    }
    if cfg.is_inert() {
        return Ok(vec![0.0; c_answers.len()]);
    }
    let alpha = cfg.alpha;
    let group_mean = c_answers.iter().sum::<f64>() / c_answers.len() as f64;
    Ok(c_answers
        .iter()
        .map(|&c| match cfg.mode {
            ArmMode::Off => 0.0,
            ArmMode::PromptMinusAnswer => alpha * (c_prompt - c),
            ArmMode::OneMinusAnswer => alpha * (1.0 - c),
            ArmMode::OneMinusBoth => alpha * (1.0 - c_prompt - c),
            ArmMode::GroupMeanMinusAnswer => alpha * (group_mean - c),
        })
        .collect())
}

/// Applies offsets to every rollout unless the skip rule fires.
pub fn reweight(adv: &AdvantageVector, offsets: &[f64], rewards: &[u8], skip_rule: SkipRule) -> Result<AdvantageVector> {
    check_rewards(rewards)?;
    if offsets.len() != adv.len() || rewards.len() != adv.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: {} advantages, {} offsets, {} rewards",
            adv.len(),
            offsets.len(),
            rewards.len()
        )));
    }
    let mut out = adv.clone();
    if skip_rule.fires(rewards) {
        out.reweighted = adv.base.clone();
        out.skipped = true;
    } else {
        out.reweighted = adv.base.iter().zip(offsets).map(|(a, o)| a + o).collect();
        out.skipped = false;
    }
    Ok(out)
}

/// Largest α for which every incorrect rollout keeps a negative re-weighted
/// advantage: `|A_neg| / max_incorrect |u_i|`, where `unit_offsets` are the
/// offsets computed at α = 1. Infinite when those offsets all vanish.
pub fn sign_preserving_alpha_bound(adv: &AdvantageVector, unit_offsets: &[f64], rewards: &[u8]) -> Result<f64> {
    check_rewards(rewards)?;
    if unit_offsets.len() != rewards.len() || adv.len() != rewards.len() {
        return Err(Error::InvalidArgument("length mismatch".into()));
    }
    let correct = rewards.iter().filter(|&&r| r == 1).count();
    if correct == 0 || correct == rewards.len() {
        return Err(Error::InvalidArgument("group is degenerate (all 0 or all 1 rewards)".into()));
    }
    let (idx, _) = rewards
        .iter()
        .enumerate()
        .find(|(_, &r)| r == 0)
        .expect("non-degenerate group has an incorrect rollout");
    let a_neg = adv.base[idx].abs();
    let worst = rewards
        .iter()
        .zip(unit_offsets)
        .filter(|(&r, _)| r == 0)
        .map(|(_, u)| u.abs())
        .fold(0.0, f64::max);
    Ok(if worst == 0.0 { f64::INFINITY } else { a_neg / worst })
}
