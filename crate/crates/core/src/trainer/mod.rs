//! Group rollout collection and the clipped-surrogate training loop.
//!
//! One [`Trainer::train_step`] is one collection phase followed by
//! `updates_per_collection` passes of SGD over mini-batches of groups:
//!
//! 1. snapshot θ_old and sample `prompts_per_batch` prompts;
//! 2. draw `group_size` rollouts per prompt and verify them;
//! 3. compute group-normalized advantages, confidences under θ_old, offsets
//!    and the re-weighted advantages (frozen for the rest of the step);
//! 4. descend the negated surrogate (or the REINFORCE loss) mini-batch by
//!    mini-batch.

pub mod gradcheck;
mod surrogate;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::advantage::{arm_offsets, grpo_advantages, reweight, AdvantageVector, ArmConfig, DEFAULT_DELTA};
use crate::confidence::{prompt_confidence, sequence_confidence, ConfidenceReport, DEFAULT_FRACTION};
use crate::error::{Error, Result};
use crate::metrics::{token_entropy_stats, EntropyStats};
use crate::policy::{PolicyParams, Rollout, SamplingConfig, TokenId};
use crate::rng::{derive_seed, stream, stream_rng};
use crate::tasks::{Prompt, TaskSpec};

pub use surrogate::{reinforce_loss_and_grad, surrogate_loss_and_grad, ClipConfig, LossEval, Normalization};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Clipped surrogate with plain group-normalized advantages.
    Grpo,
    /// Clipped surrogate with confidence re-weighted advantages.
    Progrpo,
    /// Reward-weighted log-likelihood, no baseline, no clipping.
    Reinforce,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Grpo => "grpo",
            Algorithm::Progrpo => "progrpo",
            Algorithm::Reinforce => "reinforce",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grpo" => Ok(Algorithm::Grpo),
            "progrpo" => Ok(Algorithm::Progrpo),
            "reinforce" => Ok(Algorithm::Reinforce),
            _ => Err(Error::InvalidArgument(format!("unknown algorithm {s:?}"))),
        }
    }
}

/// `[train]` section. The re-weighting settings live in their own `[arm]`
/// section and are merged in by the experiment layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub context_order: usize,
    pub group_size: usize,
    pub prompts_per_batch: usize,
    pub minibatches_per_batch: usize,
    pub updates_per_collection: usize,
    pub learning_rate: f64,
    pub clip: ClipConfig,
    pub normalization: Normalization,
    pub sampling: SamplingConfig,
    pub fraction: f64,
    pub delta: f64,
    pub total_steps: u64,
    pub master_seed: u64,
    #[serde(skip)]
    pub arm: ArmConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Progrpo,
            context_order: 3,
            group_size: 8,
            prompts_per_batch: 16,
            minibatches_per_batch: 2,
            updates_per_collection: 2,
            learning_rate: 0.05,
            clip: ClipConfig::default(),
            normalization: Normalization::TokenGlobal,
            sampling: SamplingConfig::default(),
            fraction: DEFAULT_FRACTION,
            delta: DEFAULT_DELTA,
            total_steps: 500,
            master_seed: 0,
            arm: ArmConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |field: &str, v: u64| {
            if v == 0 {
                Err(Error::config(format!("train.{field}"), "must be positive"))
            } else {
                Ok(())
            }
        };
        positive("context_order", self.context_order as u64)?;
        positive("prompts_per_batch", self.prompts_per_batch as u64)?;
        positive("minibatches_per_batch", self.minibatches_per_batch as u64)?;
        positive("updates_per_collection", self.updates_per_collection as u64)?;
        positive("total_steps", self.total_steps)?;
        if self.group_size < 2 {
            return Err(Error::config("train.group_size", "must be at least 2"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be a finite value >= 0"));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::config("train.fraction", "must lie in (0, 1]"));
        }
        if self.delta.is_nan() || self.delta <= 0.0 {
            return Err(Error::config("train.delta", "must be positive"));
        }
        // config files store integers as signed 64-bit
        if self.master_seed > i64::MAX as u64 {
            return Err(Error::config("train.master_seed", "must fit in a signed 64-bit integer"));
        }
        self.clip.validate()?;
        self.sampling
            .validate()
            .map_err(|e| Error::config("train.sampling", e.to_string()))?;
        self.arm.validate()
    }

    /// Re-weighting actually applied: GRPO and REINFORCE never re-weight.
    pub fn effective_arm(&self) -> ArmConfig {
        match self.algorithm {
            Algorithm::Progrpo => self.arm,
            Algorithm::Grpo | Algorithm::Reinforce => ArmConfig {
                skip_rule: self.arm.skip_rule,
                ..ArmConfig::off()
            },
        }
    }
}

/// `G` rollouts for one prompt with their binary rewards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    /// Position of the prompt within its batch.
    pub prompt_index: usize,
    pub prompt: Vec<TokenId>,
    pub rollouts: Vec<Rollout>,
    pub rewards: Vec<u8>,
}

/// Samples `group_size` rollouts per prompt from `params_old`. Rollout `m` of
/// prompt slot `s` uses the stream derived from `(stream_seed, s, m)`.
pub fn collect_groups(
    params_old: &PolicyParams,
    task: &TaskSpec,
    prompts: &[&Prompt],
    group_size: usize,
    sampling: &SamplingConfig,
    stream_seed: u64,
) -> Result<Vec<RolloutGroup>> {
    if group_size < 2 {
        return Err(Error::InvalidArgument("group size must be at least 2".into()));
    }
    prompts
        .iter()
        .enumerate()
        .map(|(slot, prompt)| {
            let rollouts = (0..group_size)
                .map(|m| {
                    let mut rng = stream_rng(stream_seed, &[slot as u64, m as u64]);
                    params_old.sample_rollout(&prompt.tokens, sampling, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let rewards = rollouts
                .iter()
                .map(|r| task.verify(&prompt.tokens, &r.response))
                .collect();
            Ok(RolloutGroup {
                prompt_index: slot,
                prompt: prompt.tokens.clone(),
                rollouts,
                rewards,
            })
        })
        .collect()
}

/// A group with everything the update phase needs, computed under θ_old.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparedGroup {
    pub group: RolloutGroup,
    pub advantages: AdvantageVector,
    pub offsets: Vec<f64>,
    pub prompt_confidence: Option<ConfidenceReport>,
    pub answer_confidences: Vec<ConfidenceReport>,
}

/// Advantage construction for one group. Confidences are only evaluated when
/// the group is re-weighted.
pub fn prepare_group(
    params_old: &PolicyParams,
    group: RolloutGroup,
    arm: &ArmConfig,
    fraction: f64,
    delta: f64,
) -> Result<PreparedGroup> {
    let base = grpo_advantages(&group.rewards, delta)?;
    if arm.is_inert() || arm.skip_rule.fires(&group.rewards) {
        let offsets = vec![0.0; group.rollouts.len()];
        let advantages = reweight(&base, &offsets, &group.rewards, arm.skip_rule)?;
        return Ok(PreparedGroup {
            group,
            advantages,
            offsets,
            prompt_confidence: None,
            answer_confidences: Vec::new(),
        });
    }
    let prompt_conf = prompt_confidence(params_old, &group.prompt, fraction)?;
    // recorded log-probs are exactly θ_old's temperature-1 scores
    let answers = group
        .rollouts
        .iter()
        .map(|r| sequence_confidence(&r.step_logprobs, fraction))
        .collect::<Result<Vec<_>>>()?;
    let c_answers: Vec<f64> = answers.iter().map(|c| c.confidence).collect();
    let offsets = arm_offsets(arm, prompt_conf.confidence, &c_answers)?;
    let advantages = reweight(&base, &offsets, &group.rewards, arm.skip_rule)?;
    Ok(PreparedGroup {
        group,
        advantages,
        offsets,
        prompt_confidence: Some(prompt_conf),
        answer_confidences: answers,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub step: u64,
    pub mean_reward: f64,
    /// Next-token entropy over the batch's rollouts under θ_old.
    pub token_entropy: EntropyStats,
    /// Mean loss over the step's mini-batch updates.
    pub loss: f64,
    /// Mean gradient norm over the step's mini-batch updates.
    pub grad_norm: f64,
    pub groups: usize,
    pub skipped_groups: usize,
    pub all_correct_groups: usize,
    pub all_incorrect_groups: usize,
    pub clipped_token_fraction: f64,
    pub adv_mean: f64,
    pub adv_min: f64,
    pub adv_max: f64,
}

pub struct StepReport {
    pub stats: BatchStats,
    /// θ_old, the policy the step's rollouts were drawn from.
    pub params_old: PolicyParams,
    pub groups: Vec<PreparedGroup>,
}

/// Owns the live parameters and the step counter.
#[derive(Clone, Debug)]
pub struct Trainer {
    task: TaskSpec,
    config: TrainConfig,
    params: PolicyParams,
    step: u64,
}

impl Trainer {
    pub fn new(task: TaskSpec, config: TrainConfig) -> Result<Self> {
        let params = PolicyParams::new(task.vocab().clone(), config.context_order)?;
        Self::resume(task, config, params, 0)
    }

    /// Continues from a checkpoint. Every stream is keyed by the step number,
    /// so resuming at step `k` reproduces an uninterrupted run.
    pub fn resume(task: TaskSpec, config: TrainConfig, params: PolicyParams, step: u64) -> Result<Self> {
        config.validate()?;
        if params.vocab() != task.vocab() {
            return Err(Error::InvalidArgument("policy vocabulary differs from the task's".into()));
        }
        if params.order() != config.context_order {
            return Err(Error::config("train.context_order", "does not match the checkpoint"));
        }
        Ok(Self {
            task,
            config,
            params,
            step,
        })
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    pub fn train_step(&mut self) -> Result<StepReport> {
        let cfg = &self.config;
        let step = self.step;
        let params_old = self.params.clone();

        let mut prompt_rng = stream_rng(cfg.master_seed, &[stream::PROMPTS, step]);
        let prompts: Vec<&Prompt> = (0..cfg.prompts_per_batch)
            .map(|_| self.task.sample_prompt(&mut prompt_rng))
            .collect();
        let rollout_seed = derive_seed(cfg.master_seed, &[stream::ROLLOUTS, step]);
        let groups = collect_groups(
            &params_old,
            &self.task,
            &prompts,
            cfg.group_size,
            &self.task.capped_sampling(&cfg.sampling),
            rollout_seed,
        )?;

        let arm = cfg.effective_arm();
        let prepared = groups
            .into_iter()
            .map(|g| prepare_group(&params_old, g, &arm, cfg.fraction, cfg.delta))
            .collect::<Result<Vec<_>>>()?;

        let n_chunks = cfg.minibatches_per_batch.min(prepared.len());
        let chunk_len = prepared.len().div_ceil(n_chunks);
        let mut losses = Vec::new();
        let mut norms = Vec::new();
        let mut clipped = 0usize;
        let mut tokens = 0usize;
        for _ in 0..cfg.updates_per_collection {
            for chunk in prepared.chunks(chunk_len) {
                let groups: Vec<RolloutGroup> = chunk.iter().map(|p| p.group.clone()).collect();
                let eval = match cfg.algorithm {
                    Algorithm::Reinforce => reinforce_loss_and_grad(&self.params, &groups)?,
                    Algorithm::Grpo | Algorithm::Progrpo => {
                        let adv: Vec<Vec<f64>> = chunk.iter().map(|p| p.advantages.reweighted.clone()).collect();
                        surrogate_loss_and_grad(&self.params, &groups, &adv, &cfg.clip, cfg.normalization)?
                    }
                };
                if !eval.loss.is_finite() || !eval.grad.is_finite() {
                    return Err(Error::NonFinite {
                        what: "loss or gradient".into(),
                        step,
                        dump: serde_json::to_string(chunk)?,
                    });
                }
                clipped += eval.clipped_tokens;
                tokens += eval.total_tokens;
                losses.push(eval.loss);
                norms.push(eval.grad.norm());
                if cfg.learning_rate > 0.0 {
                    self.params.apply_update(&eval.grad, -cfg.learning_rate).map_err(|e| Error::NonFinite {
                        what: format!("parameters ({e})"),
                        step,
                        dump: serde_json::to_string(chunk).unwrap_or_default(),
                    })?;
                }
            }
        }

        let rollouts: Vec<&Rollout> = prepared.iter().flat_map(|p| &p.group.rollouts).collect();
        let entropy = token_entropy_stats(&params_old, rollouts.iter().copied())?;
        let rewards: Vec<u8> = prepared.iter().flat_map(|p| p.group.rewards.iter().copied()).collect();
        let adv: Vec<f64> = prepared.iter().flat_map(|p| p.advantages.reweighted.iter().copied()).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        let g = cfg.group_size;
        let stats = BatchStats {
            step,
            mean_reward: rewards.iter().map(|&r| f64::from(r)).sum::<f64>() / rewards.len() as f64,
            token_entropy: entropy,
            loss: mean(&losses),
            grad_norm: mean(&norms),
            groups: prepared.len(),
            skipped_groups: prepared.iter().filter(|p| p.advantages.skipped).count(),
            all_correct_groups: prepared
                .iter()
                .filter(|p| p.group.rewards.iter().all(|&r| r == 1))
                .count(),
            all_incorrect_groups: prepared
                .iter()
                .filter(|p| p.group.rewards.iter().all(|&r| r == 0))
                .count(),
            clipped_token_fraction: if tokens == 0 { 0.0 } else { clipped as f64 / tokens as f64 },
            adv_mean: mean(&adv),
            adv_min: adv.iter().copied().fold(f64::INFINITY, f64::min),
            adv_max: adv.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        };
        debug_assert_eq!(rewards.len(), prepared.len() * g);
        self.step += 1;
        Ok(StepReport {
            stats,
            params_old,
            groups: prepared,
        })
    }
}
