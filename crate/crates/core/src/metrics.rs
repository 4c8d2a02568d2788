//! Evaluation metrics: pass@k, token-entropy summaries, Distinct-n,
//! Self-BLEU and the policy's entropy over a prompt's success set.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{PolicyParams, Rollout, SamplingConfig, TokenId};
use crate::rng::{derive_seed, stream, stream_rng};
use crate::tasks::{SuccessSet, TaskSpec};
use crate::trainer::BatchStats;

/// Prompts with more correct responses than this are not tracked.
pub const MANIFOLD_LIMIT: usize = 10_000;

/// Unbiased estimate of P(at least one of `k` draws is correct) from `n`
/// samples with `c` correct: `1 − C(n−c, k) / C(n, k)`.
pub fn pass_at_k(n: usize, c: usize, k: usize) -> Result<f64> {
    if c > n {
        return Err(Error::InvalidArgument(format!("correct count {c} exceeds samples {n}")));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("k must lie in [1, {n}], got {k}")));
    }
    if n - c < k {
        return Ok(1.0);
    }
    // C(n−c, k)/C(n, k) = Π_{i=n−c+1}^{n} (1 − k/i)
    let miss: f64 = (n - c + 1..=n).map(|i| 1.0 - k as f64 / i as f64).product();
    Ok(1.0 - miss)
}

/// Dataset-level pass@k: the mean over prompts of per-prompt estimates.
pub fn mean_pass_at_k(counts: &[(usize, usize)], k: usize) -> Result<f64> {
    if counts.is_empty() {
        return Err(Error::InvalidArgument("no prompts to average".into()));
    }
    let total = counts
        .iter()
        .map(|&(n, c)| pass_at_k(n, c, k))
        .sum::<Result<f64>>()?;
    Ok(total / counts.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyStats {
    pub mean: f64,
    pub p5: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p95: f64,
}

/// Quantile `q ∈ [0, 1]` of ascending `sorted` data, interpolating linearly
/// between closest ranks.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn summarize(values: &[f64]) -> Result<EntropyStats> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("nothing to summarize".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(EntropyStats {
        mean: values.iter().sum::<f64>() / values.len() as f64,
        p5: quantile(&sorted, 0.05),
        p25: quantile(&sorted, 0.25),
        p50: quantile(&sorted, 0.50),
        p75: quantile(&sorted, 0.75),
        p95: quantile(&sorted, 0.95),
    })
}

/// Next-token entropy at every context visited by the rollouts' responses.
pub fn token_entropy_stats<'a, I>(params: &PolicyParams, rollouts: I) -> Result<EntropyStats>
where
    I: IntoIterator<Item = &'a Rollout>,
{
    let mut values = Vec::new();
    for r in rollouts {
        let mut history = r.prompt.clone();
        for &tok in &r.response {
            values.push(params.policy_entropy(&params.context(&history))?);
            history.push(tok);
        }
    }
    if values.is_empty() {
        return Err(Error::InvalidArgument("token entropy needs at least one rollout token".into()));
    }
    summarize(&values)
}

/// Unique n-grams over total n-grams, pooled across sequences. Sequences
/// shorter than `n` contribute nothing.
pub fn distinct_n<T: Eq + Hash>(sequences: &[Vec<T>], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    let mut seen = std::collections::HashSet::new();
    let mut total = 0usize;
    for s in sequences.iter().filter(|s| s.len() >= n) {
        for gram in s.windows(n) {
            seen.insert(gram);
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::InvalidArgument(format!("no sequence has length >= {n}")));
    }
    Ok(seen.len() as f64 / total as f64)
}

fn ngram_counts<T: Eq + Hash>(seq: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    for gram in seq.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

fn bleu<T: Eq + Hash>(hyp: &[T], refs: &[&[T]], max_n: usize) -> f64 {
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let hyp_counts = ngram_counts(hyp, n);
        let total: usize = hyp_counts.values().sum();
        let mut max_ref: HashMap<&[T], usize> = HashMap::new();
        for r in refs {
            for (gram, c) in ngram_counts(r, n) {
                let slot = max_ref.entry(gram).or_insert(0);
                *slot = (*slot).max(c);
            }
        }
        let clipped: usize = hyp_counts
            .iter()
            .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
        let p = if clipped == 0 {
            1.0 / (2.0 * total as f64)
        } else {
            clipped as f64 / total as f64
        };
        log_sum += p.ln();
    }
    let h = hyp.len() as f64;
    // closest reference length, ties to the shorter one
    let r = refs
        .iter()
        .map(|r| r.len())
        .min_by_key(|&l| ((l as i64 - hyp.len() as i64).abs(), l))
        .unwrap_or(hyp.len()) as f64;
    let bp = (1.0 - r / h).exp().min(1.0);
    bp * (log_sum / max_n as f64).exp()
}

/// Mean BLEU of each sequence against all the others. `max_n` is capped at
/// the shortest sequence length.
pub fn self_bleu<T: Eq + Hash>(sequences: &[Vec<T>], max_n: usize) -> Result<f64> {
    if sequences.len() < 2 {
        return Err(Error::InvalidArgument("self-BLEU needs at least two sequences".into()));
    }
    let shortest = sequences.iter().map(Vec::len).min().unwrap_or(0);
    if shortest == 0 || max_n == 0 {
        return Err(Error::InvalidArgument("self-BLEU needs nonempty sequences and max_n >= 1".into()));
    }
    let max_n = max_n.min(shortest);
    let total: f64 = (0..sequences.len())
        .map(|i| {
            let refs: Vec<&[T]> = sequences
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, s)| s.as_slice())
                .collect();
            bleu(&sequences[i], &refs, max_n)
        })
        .sum();
    Ok(total / sequences.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifoldEntropy {
    pub entropy: f64,
    pub kl_to_uniform: f64,
    pub cardinality: usize,
}

/// Entropy of the policy restricted and renormalized to the success set,
/// and its KL divergence from the uniform distribution on that set.
pub fn success_manifold_entropy(params: &PolicyParams, success: &SuccessSet) -> Result<ManifoldEntropy> {
    let k = success.cardinality();
    if k == 0 {
        return Err(Error::InvalidArgument("success set is empty".into()));
    }
    let log_probs = success
        .members
        .iter()
        .map(|m| Ok(params.score_sequence(&success.prompt, m)?.iter().sum::<f64>()))
        .collect::<Result<Vec<f64>>>()?;
    let max = log_probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + log_probs.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    let entropy: f64 = -log_probs
        .iter()
        .map(|l| {
            let lp = l - log_z;
            lp.exp() * lp
        })
        .sum::<f64>();
    let ln_k = (k as f64).ln();
    let entropy = entropy.clamp(0.0, ln_k);
    Ok(ManifoldEntropy {
        entropy,
        kl_to_uniform: ln_k - entropy,
        cardinality: k,
    })
}

/// `[metrics]` section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Samples per prompt at evaluation.
    pub eval_samples: usize,
    pub pass_k: Vec<usize>,
    /// Defaults to the policy's own distribution (temperature 1, no nucleus).
    pub eval_sampling: SamplingConfig,
    pub self_bleu_max_n: usize,
    /// Manifold entropy is computed every this many steps and at the end.
    pub manifold_interval: u64,
    pub manifold_limit: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            eval_samples: 16,
            pass_k: vec![1, 8],
            eval_sampling: SamplingConfig::default(),
            self_bleu_max_n: 4,
            manifold_interval: 50,
            manifold_limit: MANIFOLD_LIMIT,
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eval_samples == 0 {
            return Err(Error::config("metrics.eval_samples", "must be positive"));
        }
        if self.pass_k.is_empty() || self.pass_k.iter().any(|&k| k == 0 || k > self.eval_samples) {
            return Err(Error::config(
                "metrics.pass_k",
                format!("every k must lie in [1, eval_samples = {}]", self.eval_samples),
            ));
        }
        if self.self_bleu_max_n == 0 {
            return Err(Error::config("metrics.self_bleu_max_n", "must be positive"));
        }
        if self.manifold_interval == 0 {
            return Err(Error::config("metrics.manifold_interval", "must be positive"));
        }
        self.eval_sampling
            .validate()
            .map_err(|e| Error::config("metrics.eval_sampling", e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifoldEntry {
    pub prompt: String,
    #[serde(flatten)]
    pub value: ManifoldEntropy,
}

/// Held-out evaluation of one policy over every task prompt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub pass_at: BTreeMap<usize, f64>,
    pub distinct_2: Option<f64>,
    pub self_bleu: Option<f64>,
    pub manifold: Option<Vec<ManifoldEntry>>,
}

/// Success sets of every prompt small enough to track, computed once per run.
pub fn tracked_success_sets(task: &TaskSpec, limit: usize) -> Result<Vec<SuccessSet>> {
    let mut out = Vec::new();
    for p in task.prompts() {
        let set = task.enumerate_success_set(&p.tokens)?;
        if set.cardinality() <= limit && set.cardinality() > 0 {
            out.push(set);
        }
    }
    Ok(out)
}

fn mean_of(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Samples `eval_samples` responses per prompt from `params` on the
/// evaluation stream of `(seed, step)`. Diversity is measured among each
/// prompt's correct responses and averaged over prompts that have enough.
pub fn evaluate(
    params: &PolicyParams,
    task: &TaskSpec,
    cfg: &MetricsConfig,
    seed: u64,
    step: u64,
    manifold_sets: Option<&[SuccessSet]>,
) -> Result<EvalSummary> {
    let base = derive_seed(seed, &[stream::EVAL, step]);
    let sampling = task.capped_sampling(&cfg.eval_sampling);
    let mut counts = Vec::new();
    let mut distinct = Vec::new();
    let mut bleus = Vec::new();
    for (pi, prompt) in task.prompts().iter().enumerate() {
        let mut correct: Vec<Vec<TokenId>> = Vec::new();
        for s in 0..cfg.eval_samples {
            let mut rng = stream_rng(base, &[pi as u64, s as u64]);
            let r = params.sample_rollout(&prompt.tokens, &sampling, &mut rng)?;
            if task.verify(&prompt.tokens, &r.response) == 1 {
                correct.push(r.response);
            }
        }
        counts.push((cfg.eval_samples, correct.len()));
        if let Ok(d) = distinct_n(&correct, 2) {
            distinct.push(d);
        }
        if correct.len() >= 2 {
            bleus.push(self_bleu(&correct, cfg.self_bleu_max_n)?);
        }
    }
    let pass_at = cfg
        .pass_k
        .iter()
        .map(|&k| Ok((k, mean_pass_at_k(&counts, k)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let manifold = manifold_sets
        .map(|sets| {
            sets.iter()
                .map(|set| {
                    Ok(ManifoldEntry {
                        prompt: task.vocab().render(&set.prompt),
                        value: success_manifold_entropy(params, set)?,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;
    Ok(EvalSummary {
        pass_at,
        distinct_2: mean_of(&distinct),
        self_bleu: mean_of(&bleus),
        manifold,
    })
}

/// One line of the metrics stream. Training fields describe the batch
/// collected at `step`; evaluation fields describe the policy after the
/// step's update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub mean_reward: f64,
    pub pass_at_1: f64,
    pub pass_at: BTreeMap<usize, f64>,
    pub token_entropy: EntropyStats,
    pub distinct_2: Option<f64>,
    pub self_bleu: Option<f64>,
    pub manifold_entropy_mean: Option<f64>,
    pub manifold_kl_mean: Option<f64>,
    pub manifold: Option<Vec<ManifoldEntry>>,
    pub loss: f64,
    pub grad_norm: f64,
    pub skipped_groups: usize,
    pub all_correct_groups: usize,
    pub all_incorrect_groups: usize,
    pub clipped_token_fraction: f64,
    pub adv_mean: f64,
    pub adv_min: f64,
    pub adv_max: f64,
}

impl MetricsRecord {
    pub fn new(stats: &BatchStats, eval: EvalSummary) -> Result<Self> {
        let pass_at_1 = match eval.pass_at.get(&1) {
            Some(&v) => v,
            None => return Err(Error::config("metrics.pass_k", "must include k = 1")),
        };
        let (manifold_entropy_mean, manifold_kl_mean) = match &eval.manifold {
            Some(m) => (
                mean_of(&m.iter().map(|e| e.value.entropy).collect::<Vec<_>>()),
                mean_of(&m.iter().map(|e| e.value.kl_to_uniform).collect::<Vec<_>>()),
            ),
            None => (None, None),
        };
        Ok(Self {
            step: stats.step,
            mean_reward: stats.mean_reward,
            pass_at_1,
            pass_at: eval.pass_at,
            token_entropy: stats.token_entropy,
            distinct_2: eval.distinct_2,
            self_bleu: eval.self_bleu,
            manifold_entropy_mean,
            manifold_kl_mean,
            manifold: eval.manifold,
            loss: stats.loss,
            grad_norm: stats.grad_norm,
            skipped_groups: stats.skipped_groups,
            all_correct_groups: stats.all_correct_groups,
            all_incorrect_groups: stats.all_incorrect_groups,
            clipped_token_fraction: stats.clipped_token_fraction,
            adv_mean: stats.adv_mean,
            adv_min: stats.adv_min,
            adv_max: stats.adv_max,
        })
    }

    pub fn csv_header(pass_k: &[usize]) -> String {
        let mut cols: Vec<String> = ["step", "mean_reward", "pass_at_1"].map(String::from).to_vec();
        cols.extend(pass_k.iter().map(|k| format!("pass_at_{k}_est")));
        cols.extend(
            [
                "entropy_mean",
                "entropy_p5",
                "entropy_p25",
                "entropy_p50",
                "entropy_p75",
                "entropy_p95",
                "distinct_2",
                "self_bleu",
                "manifold_entropy_mean",
                "manifold_kl_mean",
                "loss",
                "grad_norm",
                "skipped_groups",
                "all_correct_groups",
                "all_incorrect_groups",
                "clipped_token_fraction",
                "adv_mean",
                "adv_min",
                "adv_max",
            ]
            .map(String::from),
        );
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        let e = &self.token_entropy;
        let mut cols = vec![
            self.step.to_string(),
            format!("{:?}", self.mean_reward),
            format!("{:?}", self.pass_at_1),
        ];
        cols.extend(self.pass_at.values().map(|v| format!("{v:?}")));
        cols.extend([e.mean, e.p5, e.p25, e.p50, e.p75, e.p95].map(|v| format!("{v:?}")));
        cols.extend([
            opt(self.distinct_2),
            opt(self.self_bleu),
            opt(self.manifold_entropy_mean),
            opt(self.manifold_kl_mean),
            format!("{:?}", self.loss),
            format!("{:?}", self.grad_norm),
            self.skipped_groups.to_string(),
            self.all_correct_groups.to_string(),
            self.all_incorrect_groups.to_string(),
            format!("{:?}", self.clipped_token_fraction),
            format!("{:?}", self.adv_mean),
            format!("{:?}", self.adv_min),
            format!("{:?}", self.adv_max),
        ]);
        cols.join(",")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{Vocab, BOS};
    use proptest::prelude::*;

    fn binom(n: usize, k: usize) -> f64 {
        if k > n {
            return 0.0;
        }
        (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
    }

    #[test]
    fn pass_at_k_examples() {
        assert!((pass_at_k(4, 2, 2).unwrap() - (1.0 - 1.0 / 6.0)).abs() < 1e-15);
        for k in 1..=5 {
            assert_eq!(pass_at_k(5, 0, k).unwrap(), 0.0);
            assert_eq!(pass_at_k(5, 5, k).unwrap(), 1.0);
        }
        assert!(pass_at_k(3, 1, 4).is_err());
        assert!(pass_at_k(3, 4, 1).is_err());
        assert!(pass_at_k(3, 1, 0).is_err());
        assert!((pass_at_k(10, 3, 1).unwrap() - 0.3).abs() < 1e-15);
        assert!((pass_at_k(7, 2, 3).unwrap() - (1.0 - binom(5, 3) / binom(7, 3))).abs() < 1e-14);
        assert!((mean_pass_at_k(&[(4, 0), (4, 4)], 2).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn percentiles_interpolate() {
        let s = summarize(&[4.0, 0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.p50, 2.0);
        assert!((s.p25 - 1.0).abs() < 1e-15);
        assert!((s.p5 - 0.2).abs() < 1e-15);
        assert!((s.p95 - 3.8).abs() < 1e-15);
    }

    fn rollout(prompt: Vec<u32>, response: Vec<u32>) -> Rollout {
        let n = response.len();
        Rollout {
            prompt,
            response,
            step_probs: vec![0.5; n],
            step_logprobs: vec![0.5f64.ln(); n],
            truncated: false,
        }
    }

    #[test]
    fn entropy_fixtures() {
        let vocab = Vocab::new(["a", "b", "c", "<eos>"], "<eos>").unwrap();
        let mut p = PolicyParams::new(vocab, 1).unwrap();
        let rs = [rollout(vec![0], vec![1, 2, 3]), rollout(vec![1], vec![3])];
        let s = token_entropy_stats(&p, &rs).unwrap();
        assert!((s.mean - 4f64.ln()).abs() < 1e-15);
        assert!((s.p95 - s.p5).abs() < 1e-15);

        for ctx in [BOS, 0, 1, 2, 3] {
            p.set_logits(vec![ctx], vec![0.0, 0.0, 0.0, 800.0]).unwrap();
        }
        let s = token_entropy_stats(&p, &rs).unwrap();
        assert!(s.p95 < 1e-12 && s.mean < 1e-12);

        // context "a" stays uniform, context "b" one-hot: visited equally
        let mut p = PolicyParams::new(p.vocab().clone(), 1).unwrap();
        p.set_logits(vec![1], vec![0.0, 0.0, 0.0, 800.0]).unwrap();
        let rs = [rollout(vec![0], vec![3]), rollout(vec![1], vec![3])];
        let s = token_entropy_stats(&p, &rs).unwrap();
        assert!((s.mean - std::f64::consts::LN_2).abs() < 1e-4);
        assert!(token_entropy_stats(&p, &[]).is_err());
    }

    fn words(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn distinct_fixtures() {
        assert!((distinct_n(&[words("a b a b")], 2).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        let same = vec![words("a a a"), words("a a a")];
        assert!((distinct_n(&same, 2).unwrap() - 0.25).abs() < 1e-12);
        assert_eq!(distinct_n(&[words("a b c"), words("d e")], 2).unwrap(), 1.0);
        assert!(distinct_n(&[words("a")], 2).is_err());
    }

    #[test]
    fn self_bleu_fixtures() {
        let pair = vec![words("a b c d"), words("a b c e")];
        assert!((self_bleu(&pair, 2).unwrap() - (0.75f64 * 2.0 / 3.0).sqrt()).abs() < 1e-9);
        let same = vec![words("a b c d e"); 3];
        assert!((self_bleu(&same, 4).unwrap() - 1.0).abs() < 1e-12);
        // disjoint vocabularies: only the smoothing floor contributes
        let a: Vec<u32> = (0..20).map(|i| i % 5).collect();
        let b: Vec<u32> = (0..20).map(|i| 10 + i % 5).collect();
        assert!(self_bleu(&[a, b], 4).unwrap() < 0.05);
        assert!(self_bleu(&[words("a b")], 4).is_err());
    }

    #[test]
    fn brevity_penalty_uses_closest_reference() {
        // hyp "a b" vs ref "a b c d": r = 4, h = 2 → BP = e^{-1}; precisions 1
        let s = bleu(&words("a b"), &[&words("a b c d")[..]], 2);
        assert!((s - (-1f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn manifold_fixtures() {
        let vocab = Vocab::new(["a", "b", "c", "<eos>"], "<eos>").unwrap();
        let mut p = PolicyParams::new(vocab, 1).unwrap();
        let single = SuccessSet {
            prompt: vec![0],
            members: vec![vec![3]],
        };
        let m = success_manifold_entropy(&p, &single).unwrap();
        assert_eq!((m.entropy, m.kl_to_uniform), (0.0, 0.0));

        // after "a": b with 0.5, c with 0.25, eos with 0.25 (a gets 0 mass)
        p.set_logits(vec![0], vec![-1e3, 2f64.ln(), 0.0, 0.0]).unwrap();
        let set = SuccessSet {
            prompt: vec![0],
            members: vec![vec![1], vec![2], vec![3]],
        };
        let m = success_manifold_entropy(&p, &set).unwrap();
        let h = -(0.5f64 * 0.5f64.ln() + 0.5 * 0.25f64.ln());
        assert!((m.entropy - h).abs() < 1e-12);
        assert!((m.entropy - 1.0397).abs() < 1e-4);
        assert!((m.kl_to_uniform - 0.0589).abs() < 1e-4);
        assert!((m.kl_to_uniform - (3f64.ln() - m.entropy)).abs() < 1e-12);

        let empty = SuccessSet {
            prompt: vec![0],
            members: vec![],
        };
        assert!(success_manifold_entropy(&p, &empty).is_err());
    }

    #[test]
    fn uniform_policy_on_equal_length_members() {
        let task = TaskSpec::sum_to_target(&[3], 2).unwrap();
        let p = PolicyParams::new(task.vocab().clone(), 3).unwrap();
        let prompt = task.prompts()[0].tokens.clone();
        let full = task.enumerate_success_set(&prompt).unwrap();
        let two_digit = SuccessSet {
            prompt: prompt.clone(),
            members: full.members.into_iter().filter(|m| m.len() == 3).collect(),
        };
        assert_eq!(two_digit.cardinality(), 4);
        let m = success_manifold_entropy(&p, &two_digit).unwrap();
        assert!((m.entropy - 4f64.ln()).abs() < 1e-12);
        assert!(m.kl_to_uniform.abs() < 1e-12);
    }

    #[test]
    fn evaluation_is_deterministic_and_monotone_in_k() {
        let task = TaskSpec::sum_to_target(&[2, 3, 4], 2).unwrap();
        let p = PolicyParams::new(task.vocab().clone(), 3).unwrap();
        let cfg = MetricsConfig {
            pass_k: vec![1, 4, 8],
            ..MetricsConfig::default()
        };
        let sets = tracked_success_sets(&task, cfg.manifold_limit).unwrap();
        let a = evaluate(&p, &task, &cfg, 9, 3, Some(&sets)).unwrap();
        let b = evaluate(&p, &task, &cfg, 9, 3, Some(&sets)).unwrap();
        assert_eq!(a, b);
        let v: Vec<f64> = a.pass_at.values().copied().collect();
        assert!(v.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(a.manifold.unwrap().len(), 3);
    }

    #[test]
    fn metrics_config_validation() {
        assert!(MetricsConfig::default().validate().is_ok());
        let bad = MetricsConfig {
            pass_k: vec![1, 32],
            ..MetricsConfig::default()
        };
        let err = bad.validate().unwrap_err().to_string();
        assert!(err.contains("metrics.pass_k"), "{err}");
    }

    proptest! {
        #[test]
        fn pass_at_k_matches_subset_average(n in 1usize..=10, c_frac in 0.0f64..=1.0, k_frac in 0.0f64..=1.0) {
            let c = (c_frac * n as f64).round() as usize;
            let k = 1 + ((k_frac * (n - 1) as f64).round() as usize);
            // first c samples correct; enumerate every k-subset as a bitmask
            let (mut hits, mut total) = (0u64, 0u64);
            for mask in 0u32..(1 << n) {
                if mask.count_ones() as usize != k {
                    continue;
                }
                total += 1;
                if mask & ((1u32 << c) - 1) != 0 {
                    hits += 1;
                }
            }
            let brute = hits as f64 / total as f64;
            prop_assert!((pass_at_k(n, c, k).unwrap() - brute).abs() < 1e-12);
        }

        #[test]
        fn diversity_is_permutation_invariant(
            seqs in proptest::collection::vec(proptest::collection::vec(0u8..4, 2..8), 2..6),
            rot in 0usize..6,
        ) {
            let mut perm = seqs.clone();
            perm.rotate_left(rot % seqs.len());
            perm.reverse();
            prop_assert!((distinct_n(&seqs, 2).unwrap() - distinct_n(&perm, 2).unwrap()).abs() < 1e-12);
            prop_assert!((self_bleu(&seqs, 4).unwrap() - self_bleu(&perm, 4).unwrap()).abs() < 1e-12);
            let mut doubled = seqs.clone();
            doubled.extend(seqs.iter().cloned());
            prop_assert!(self_bleu(&doubled, 4).unwrap() >= self_bleu(&seqs, 4).unwrap() - 1e-12);
        }

        #[test]
        fn manifold_entropy_bounded(logits in proptest::collection::vec(-5.0f64..5.0, 4)) {
            let vocab = Vocab::new(["a", "b", "c", "<eos>"], "<eos>").unwrap();
            let mut p = PolicyParams::new(vocab, 1).unwrap();
            p.set_logits(vec![0], logits).unwrap();
            let set = SuccessSet { prompt: vec![0], members: vec![vec![0, 3], vec![1], vec![2], vec![3]] };
            let m = success_manifold_entropy(&p, &set).unwrap();
            prop_assert!(m.entropy >= 0.0 && m.entropy <= 4f64.ln());
            prop_assert!(m.kl_to_uniform >= 0.0);
            prop_assert!((m.kl_to_uniform + m.entropy - 4f64.ln()).abs() < 1e-12);
        }
    }
}
