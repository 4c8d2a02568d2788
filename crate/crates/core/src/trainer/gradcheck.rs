//! Finite-difference gradient oracle and the randomized surrogate check.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::surrogate::{surrogate_loss_and_grad, ClipConfig, Normalization};
use super::RolloutGroup;
use crate::error::{Error, Result};
use crate::policy::{Context, ParamGrad, PolicyParams, SamplingConfig, Vocab};
use crate::rng::stream_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Difference {
    Central,
    Forward,
    Backward,
}

/// Numerical gradient of `loss` over every logit of the given contexts.
pub fn finite_difference_grad<F>(
    loss: F,
    params: &PolicyParams,
    contexts: &[Context],
    step: f64,
    scheme: Difference,
) -> Result<ParamGrad>
where
    F: Fn(&PolicyParams) -> Result<f64>,
{
    if !(1e-7..=1e-3).contains(&step) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must lie in [1e-7, 1e-3], got {step}"
        )));
    }
    let v = params.vocab_size();
    let base = match scheme {
        Difference::Central => 0.0,
        _ => loss(params)?,
    };
    let mut grad = ParamGrad::new(v);
    let mut work = params.clone();
    for ctx in contexts {
        let row = params.logits(ctx)?;
        for j in 0..v {
            let mut eval = |delta: f64| -> Result<f64> {
                let mut r = row.clone();
                r[j] += delta;
                work.set_logits(ctx.clone(), r)?;
                loss(&work)
            };
            let d = match scheme {
                Difference::Central => (eval(step)? - eval(-step)?) / (2.0 * step),
                Difference::Forward => (eval(step)? - base) / step,
                Difference::Backward => (base - eval(-step)?) / step,
            };
            work.set_logits(ctx.clone(), row.clone())?;
            grad.row_mut(ctx)[j] = d;
        }
    }
    Ok(grad)
}

/// Every context visited while scoring the responses of `groups`.
pub fn touched_contexts(params: &PolicyParams, groups: &[RolloutGroup]) -> Vec<Context> {
    let mut out: Vec<Context> = groups
        .iter()
        .flat_map(|g| &g.rollouts)
        .flat_map(|r| {
            let mut history = r.prompt.clone();
            r.response
                .iter()
                .map(|&t| {
                    let ctx = params.context(&history);
                    history.push(t);
                    ctx
                })
                .collect::<Vec<_>>()
        })
        .collect();
    out.sort();
    out.dedup();
    out
}

/// Randomized surrogate-gradient check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub instances: usize,
    pub max_abs_error: f64,
    pub clipped_tokens: usize,
    pub total_tokens: usize,
    /// Candidates rejected because some ratio sat within `10·step` of a clip
    /// boundary.
    pub rejected_near_kink: usize,
}

/// One random (θ_old, θ, groups, Ã) instance.
pub struct GradInstance {
    pub params: PolicyParams,
    pub groups: Vec<RolloutGroup>,
    pub advantages: Vec<Vec<f64>>,
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Random instance: a θ_old with random logits on every touched context, rollouts
/// re-scored under it, random advantages, and θ = θ_old plus small noise.
pub fn gradient_instance(seed: u64, index: u64) -> Result<GradInstance> {
    let mut rng = stream_rng(seed, &[index]);
    let vocab = Vocab::new(["a", "b", "c", "d", "<eos>"], "<eos>")?;
    let order = 1 + (index % 3) as usize;
    let cfg = SamplingConfig {
        temperature: 1.0,
        top_p: 1.0,
        max_len: 5,
    };
    let uniform = PolicyParams::new(vocab.clone(), order)?;
    let n_groups = 1 + rng.gen_range(0..3);
    let group_size = 2 + rng.gen_range(0..4);
    let mut groups = Vec::new();
    let mut advantages = Vec::new();
    for gi in 0..n_groups {
        let prompt: Vec<u32> = (0..1 + rng.gen_range(0..3)).map(|_| rng.gen_range(0..4)).collect();
        let rollouts = (0..group_size)
            .map(|_| uniform.sample_rollout(&prompt, &cfg, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let rewards: Vec<u8> = (0..group_size).map(|_| rng.gen_range(0..=1)).collect();
        advantages.push((0..group_size).map(|_| normal(&mut rng)).collect());
        groups.push(RolloutGroup {
            prompt_index: gi,
            prompt,
            rollouts,
            rewards,
        });
    }
    // random θ_old on every touched context; rollouts are then re-scored so
    // their recorded log-probabilities belong to θ_old
    let contexts = touched_contexts(&uniform, &groups);
    let mut old = uniform;
    for ctx in &contexts {
        let row: Vec<f64> = (0..vocab.len()).map(|_| normal(&mut rng)).collect();
        old.set_logits(ctx.clone(), row)?;
    }
    for g in &mut groups {
        for r in &mut g.rollouts {
            r.step_logprobs = old.score_sequence(&r.prompt, &r.response)?;
            r.step_probs = r.step_logprobs.iter().map(|l| l.exp()).collect();
        }
    }
    let mut params = old.clone();
    for ctx in contexts {
        let row: Vec<f64> = old
            .logits(&ctx)?
            .iter()
            .map(|z| z + 0.15 * normal(&mut rng))
            .collect();
        params.set_logits(ctx, row)?;
    }
    Ok(GradInstance {
        params,
        groups,
        advantages,
    })
}

fn min_kink_distance(inst: &GradInstance, clip: &ClipConfig) -> Result<f64> {
    let mut dist = f64::INFINITY;
    for g in &inst.groups {
        for r in &g.rollouts {
            let new = inst.params.score_sequence(&r.prompt, &r.response)?;
            for (n, o) in new.iter().zip(&r.step_logprobs) {
                let ratio = (n - o).exp();
                dist = dist.min((ratio - clip.lower()).abs()).min((ratio - clip.upper()).abs());
            }
        }
    }
    Ok(dist)
}

/// Compares analytic surrogate gradients with central differences on
/// `instances` random instances whose ratios all stay `10·step` away from the
/// clip boundaries.
pub fn surrogate_gradient_check(
    instances: usize,
    seed: u64,
    step: f64,
    clip: &ClipConfig,
    normalization: Normalization,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport {
        instances: 0,
        max_abs_error: 0.0,
        clipped_tokens: 0,
        total_tokens: 0,
        rejected_near_kink: 0,
    };
    let mut index = 0u64;
    while report.instances < instances {
        let inst = gradient_instance(seed, index)?;
        index += 1;
        if min_kink_distance(&inst, clip)? < 10.0 * step {
            report.rejected_near_kink += 1;
            continue;
        }
        let analytic = surrogate_loss_and_grad(&inst.params, &inst.groups, &inst.advantages, clip, normalization)?;
        let contexts = touched_contexts(&inst.params, &inst.groups);
        let numeric = finite_difference_grad(
            |p| Ok(surrogate_loss_and_grad(p, &inst.groups, &inst.advantages, clip, normalization)?.loss),
            &inst.params,
            &contexts,
            step,
            Difference::Central,
        )?;
        report.max_abs_error = report.max_abs_error.max(analytic.grad.max_abs_diff(&numeric));
        report.clipped_tokens += analytic.clipped_tokens;
        report.total_tokens += analytic.total_tokens;
        report.instances += 1;
    }
    Ok(report)
}
