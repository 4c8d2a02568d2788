//! Tabular order-W autoregressive softmax policy.
//!
//! A policy maps the last `order` tokens (left-padded with [`BOS`]) to a
//! logit vector over the vocabulary. Contexts absent from the table use the
//! all-zero logit vector, so a freshly constructed policy is uniform.

mod grad;
mod io;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use grad::ParamGrad;

pub type TokenId = u32;

/// Padding id for positions before the start of a sequence. It never appears
/// as an emitted token and is not part of the logit vector.
pub const BOS: TokenId = TokenId::MAX;

/// A context window: exactly `order` token ids, oldest first.
pub type Context = Vec<TokenId>;

/// Ordered symbol table with a designated end-of-sequence token.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    symbols: Vec<String>,
    eos: TokenId,
}

impl Vocab {
    pub fn new<S: Into<String>>(symbols: impl IntoIterator<Item = S>, eos: &str) -> Result<Self> {
        let symbols: Vec<String> = symbols.into_iter().map(Into::into).collect();
        if symbols.len() < 2 {
            return Err(Error::InvalidVocab(format!(
                "need at least 2 symbols, got {}",
                symbols.len()
            )));
        }
        if symbols.len() >= BOS as usize {
            return Err(Error::InvalidVocab("vocabulary too large".into()));
        }
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() || s.chars().any(char::is_whitespace) {
                return Err(Error::InvalidVocab(format!(
                    "symbol {i} ({s:?}) is empty or contains whitespace"
                )));
            }
            if symbols[..i].contains(s) {
                return Err(Error::InvalidVocab(format!("duplicate symbol {s:?}")));
            }
        }
        let eos = symbols
            .iter()
            .position(|s| s == eos)
            .ok_or_else(|| Error::InvalidVocab(format!("EOS symbol {eos:?} missing")))?
            as TokenId;
        Ok(Self { symbols, eos })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn contains(&self, token: TokenId) -> bool {
        (token as usize) < self.symbols.len()
    }

    pub fn id(&self, symbol: &str) -> Option<TokenId> {
        self.symbols
            .iter()
            .position(|s| s == symbol)
            .map(|i| i as TokenId)
    }

    pub fn symbol(&self, token: TokenId) -> Option<&str> {
        self.symbols.get(token as usize).map(String::as_str)
    }

    /// Encodes whitespace-separated symbols.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        text.split_whitespace()
            .map(|s| {
                self.id(s)
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown symbol {s:?}")))
            })
            .collect()
    }

    pub fn render(&self, tokens: &[TokenId]) -> String {
        tokens
            .iter()
            .map(|&t| match t {
                BOS => "^".to_string(),
                t => self.symbol(t).map_or_else(|| format!("<{t}>"), str::to_string),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Generation controls. `max_len` counts every generated token, EOS included.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub max_len: usize,
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidSampling(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::InvalidSampling(format!(
                "top_p must lie in (0, 1], got {}",
                self.top_p
            )));
        }
        if self.max_len == 0 {
            return Err(Error::InvalidSampling("max_len must be positive".into()));
        }
        Ok(())
    }
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_p: 1.0,
            max_len: 13,
        }
    }
}

/// One sampled response together with its probabilities under the sampling
/// policy at temperature 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub prompt: Vec<TokenId>,
    pub response: Vec<TokenId>,
    pub step_probs: Vec<f64>,
    pub step_logprobs: Vec<f64>,
    pub truncated: bool,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.response.len()
    }

    pub fn is_empty(&self) -> bool {
        self.response.is_empty()
    }
}

/// Last `order` tokens of `history`, left-padded with [`BOS`].
pub fn context_window(history: &[TokenId], order: usize) -> Context {
    let mut ctx = vec![BOS; order.saturating_sub(history.len())];
    ctx.extend_from_slice(&history[history.len().saturating_sub(order)..]);
    ctx
}

/// Numerically stable `log softmax(logits / temperature)`.
pub fn log_softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits.iter().map(|&z| z / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scaled.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    scaled.into_iter().map(|z| z - lse).collect()
}

/// Tabular policy parameters θ.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    vocab: Vocab,
    order: usize,
    table: BTreeMap<Context, Vec<f64>>,
    version: u64,
}

impl PolicyParams {
    /// Uniform policy (empty table).
    pub fn new(vocab: Vocab, order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidArgument("policy order must be at least 1".into()));
        }
        Ok(Self {
            vocab,
            order,
            table: BTreeMap::new(),
            version: 0,
        })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn table(&self) -> &BTreeMap<Context, Vec<f64>> {
        &self.table
    }

    pub fn context(&self, history: &[TokenId]) -> Context {
        context_window(history, self.order)
    }

    fn check_context(&self, ctx: &[TokenId]) -> Result<()> {
        if ctx.len() != self.order {
            return Err(Error::ContextLength {
                expected: self.order,
                got: ctx.len(),
            });
        }
        Ok(())
    }

    /// Stored logits for `ctx`, or `None` when the context is at its uniform
    /// default.
    pub fn stored_logits(&self, ctx: &[TokenId]) -> Option<&[f64]> {
        self.table.get(ctx).map(Vec::as_slice)
    }

    pub fn logits(&self, ctx: &[TokenId]) -> Result<Vec<f64>> {
        self.check_context(ctx)?;
        match self.table.get(ctx) {
            Some(row) => {
                if let Some(bad) = row.iter().find(|z| !z.is_finite()) {
                    return Err(Error::CorruptParams(format!(
                        "logit {bad} at context {}",
                        self.vocab.render(ctx)
                    )));
                }
                Ok(row.clone())
            }
            None => Ok(vec![0.0; self.vocab.len()]),
        }
    }

    pub fn set_logits(&mut self, ctx: Context, logits: Vec<f64>) -> Result<()> {
        self.check_context(&ctx)?;
        if logits.len() != self.vocab.len() {
            return Err(Error::CorruptParams(format!(
                "logit vector has length {}, vocabulary has {}",
                logits.len(),
                self.vocab.len()
            )));
        }
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(Error::CorruptParams("non-finite logit".into()));
        }
        self.table.insert(ctx, logits);
        Ok(())
    }

    /// θ ← θ + scale · grad. Bumps the version tag.
    pub fn apply_update(&mut self, grad: &ParamGrad, scale: f64) -> Result<()> {
        let v = self.vocab.len();
        for (ctx, g) in grad.entries() {
            self.check_context(ctx)?;
            if g.len() != v {
                return Err(Error::CorruptParams("gradient width mismatch".into()));
            }
            let row = self.table.entry(ctx.clone()).or_insert_with(|| vec![0.0; v]);
            for (z, d) in row.iter_mut().zip(g) {
                *z += scale * d;
            }
            if row.iter().any(|z| !z.is_finite()) {
                return Err(Error::CorruptParams(format!(
                    "update produced non-finite logits at {}",
                    self.vocab.render(ctx)
                )));
            }
        }
        self.version += 1;
        Ok(())
    }

    pub(crate) fn set_version(&mut self, version: u64) {
        self.version = version;
    }

    /// Log-probabilities of the next token at temperature 1.
    pub fn next_token_logprobs(&self, ctx: &[TokenId]) -> Result<Vec<f64>> {
        Ok(log_softmax(&self.logits(ctx)?, 1.0))
    }

    /// `softmax(logits / temperature)` at `ctx`.
    pub fn next_token_distribution(&self, ctx: &[TokenId], temperature: f64) -> Result<Vec<f64>> {
        if temperature.is_nan() || temperature <= 0.0 {
            return Err(Error::InvalidSampling(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        let logits = self.logits(ctx)?;
        Ok(log_softmax(&logits, temperature)
            .into_iter()
            .map(f64::exp)
            .collect())
    }

    /// Per-token log π(target[t] | prefix ⧺ target[..t]) at temperature 1.
    /// Scoring a prompt on its own is `score_sequence(&[], prompt)`.
    pub fn score_sequence(&self, prefix: &[TokenId], target: &[TokenId]) -> Result<Vec<f64>> {
        if target.is_empty() {
            return Err(Error::InvalidArgument("cannot score an empty target".into()));
        }
        let mut history = prefix.to_vec();
        let mut out = Vec::with_capacity(target.len());
        for &tok in target {
            if !self.vocab.contains(tok) {
                return Err(Error::UnknownToken(tok));
            }
            let lp = self.next_token_logprobs(&self.context(&history))?;
            out.push(lp[tok as usize]);
            history.push(tok);
        }
        Ok(out)
    }

    /// Generates a response until EOS or `cfg.max_len` tokens.
    ///
    /// Tokens are drawn from the tempered, nucleus-truncated distribution, but
    /// the recorded probabilities always come from the full temperature-1
    /// distribution.
    pub fn sample_rollout<R: Rng + ?Sized>(
        &self,
        prompt: &[TokenId],
        cfg: &SamplingConfig,
        rng: &mut R,
    ) -> Result<Rollout> {
        cfg.validate()?;
        if prompt.is_empty() {
            return Err(Error::InvalidArgument("prompt must be nonempty".into()));
        }
        let eos = self.vocab.eos();
        let plain = cfg.temperature == 1.0 && cfg.top_p == 1.0;
        let mut history = prompt.to_vec();
        let mut response = Vec::new();
        let mut step_probs = Vec::new();
        let mut step_logprobs = Vec::new();
        while response.len() < cfg.max_len {
            let ctx = self.context(&history);
            let logits = self.logits(&ctx)?;
            let base = log_softmax(&logits, 1.0);
            let proposal: Vec<f64> = if plain {
                base.iter().map(|l| l.exp()).collect()
            } else {
                let tempered: Vec<f64> = log_softmax(&logits, cfg.temperature)
                    .into_iter()
                    .map(f64::exp)
                    .collect();
                nucleus(&tempered, cfg.top_p)
            };
            let tok = draw(&proposal, rng.gen::<f64>());
            let lp = base[tok];
            step_logprobs.push(lp);
            step_probs.push(lp.exp());
            response.push(tok as TokenId);
            history.push(tok as TokenId);
            if tok as TokenId == eos {
                break;
            }
        }
        let truncated = response.last() != Some(&eos);
        Ok(Rollout {
            prompt: prompt.to_vec(),
            response,
            step_probs,
            step_logprobs,
            truncated,
        })
    }

    /// ∇_θ log π(token | ctx): `e_token − softmax(logits)` at the context's
    /// table row, zero elsewhere.
    pub fn log_prob_gradient(&self, ctx: &[TokenId], token: TokenId) -> Result<ParamGrad> {
        if !self.vocab.contains(token) {
            return Err(Error::UnknownToken(token));
        }
        let probs = self.next_token_distribution(ctx, 1.0)?;
        let mut g = ParamGrad::new(self.vocab.len());
        g.accumulate_log_prob(ctx, &probs, token, 1.0);
        Ok(g)
    }

    /// Shannon entropy (nats) of the temperature-1 next-token distribution.
    pub fn policy_entropy(&self, ctx: &[TokenId]) -> Result<f64> {
        let lp = self.next_token_logprobs(ctx)?;
        let h = -lp.iter().map(|&l| l.exp() * l).sum::<f64>();
        Ok(h.clamp(0.0, (self.vocab.len() as f64).ln()))
    }
}

/// Keeps the smallest prefix of probability-sorted tokens (ties by id) whose
/// mass reaches `top_p`, renormalized. Other entries become 0.
pub fn nucleus(probs: &[f64], top_p: f64) -> Vec<f64> {
    if top_p >= 1.0 {
        return probs.to_vec();
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut kept = vec![0.0; probs.len()];
    let mut mass = 0.0;
    for &i in &order {
        kept[i] = probs[i];
        mass += probs[i];
        if mass >= top_p {
            break;
        }
    }
    kept.iter_mut().for_each(|p| *p /= mass);
    kept
}

/// Inverse-CDF draw from an (almost) normalized weight vector.
fn draw(weights: &[f64], u: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last_positive = i;
            if target < acc {
                return i;
            }
        }
    }
    last_positive
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn vocab4() -> Vocab {
        Vocab::new(["a", "b", "c", "<eos>"], "<eos>").unwrap()
    }

    #[test]
    fn vocab_rejects_bad_inputs() {
        assert!(Vocab::new(["<eos>"], "<eos>").is_err());
        assert!(Vocab::new(["a", "a", "<eos>"], "<eos>").is_err());
        assert!(Vocab::new(["a", "b"], "<eos>").is_err());
        assert!(Vocab::new(["a b", "<eos>"], "<eos>").is_err());
        let v = vocab4();
        assert_eq!(v.eos(), 3);
        assert_eq!(v.encode("a c <eos>").unwrap(), vec![0, 2, 3]);
        assert_eq!(v.render(&[BOS, 1]), "^ b");
    }

    #[test]
    fn context_window_pads_with_bos() {
        assert_eq!(context_window(&[], 3), vec![BOS, BOS, BOS]);
        assert_eq!(context_window(&[5], 3), vec![BOS, BOS, 5]);
        assert_eq!(context_window(&[1, 2, 3, 4], 3), vec![2, 3, 4]);
    }

    #[test]
    fn uniform_distribution_at_zero_logits() {
        let p = PolicyParams::new(vocab4(), 2).unwrap();
        let d = p.next_token_distribution(&[BOS, BOS], 1.0).unwrap();
        assert_eq!(d, vec![0.25; 4]);
    }

    #[test]
    fn hand_softmax_example() {
        let mut p = PolicyParams::new(vocab4(), 1).unwrap();
        p.set_logits(vec![BOS], vec![2f64.ln(), 0.0, 0.0, 0.0]).unwrap();
        let d = p.next_token_distribution(&[BOS], 1.0).unwrap();
        // oracle: direct exponentiation and normalization
        let e = [2.0, 1.0, 1.0, 1.0];
        for (got, w) in d.iter().zip(e) {
            assert!((got - w / 5.0).abs() < 1e-12);
        }
        let h = p.policy_entropy(&[BOS]).unwrap();
        let expected = -(0.4 * 0.4f64.ln() + 3.0 * 0.2 * 0.2f64.ln());
        assert!((h - expected).abs() < 1e-12);
        assert!((h - 1.3322).abs() < 1e-4);
    }

    #[test]
    fn high_temperature_flattens() {
        let mut p = PolicyParams::new(vocab4(), 1).unwrap();
        p.set_logits(vec![BOS], vec![3.0, -2.0, 0.5, 1.0]).unwrap();
        let d = p.next_token_distribution(&[BOS], 1e6).unwrap();
        assert!(d.iter().all(|x| (x - 0.25).abs() < 1e-5));
        assert!(p.next_token_distribution(&[BOS], 0.0).is_err());
    }

    #[test]
    fn wrong_context_length_is_rejected() {
        let p = PolicyParams::new(vocab4(), 2).unwrap();
        assert!(matches!(
            p.next_token_distribution(&[BOS], 1.0),
            Err(Error::ContextLength { .. })
        ));
    }

    #[test]
    fn corrupted_logits_are_hard_errors() {
        let mut p = PolicyParams::new(vocab4(), 1).unwrap();
        assert!(p.set_logits(vec![BOS], vec![f64::NAN, 0.0, 0.0, 0.0]).is_err());
        p.table.insert(vec![BOS], vec![f64::INFINITY, 0.0, 0.0, 0.0]);
        assert!(matches!(
            p.next_token_distribution(&[BOS], 1.0),
            Err(Error::CorruptParams(_))
        ));
    }

    #[test]
    fn uniform_scores() {
        let p = PolicyParams::new(vocab4(), 3).unwrap();
        let s = p.score_sequence(&[], &[0, 1, 2]).unwrap();
        assert_eq!(s.len(), 3);
        for x in s {
            assert!((x - 0.25f64.ln()).abs() < 1e-15);
        }
        assert!(p.score_sequence(&[0], &[]).is_err());
    }

    #[test]
    fn repeated_context_scores() {
        // W = 1: the second token's context is token 0, not BOS.
        let mut p = PolicyParams::new(vocab4(), 1).unwrap();
        p.set_logits(vec![BOS], vec![2f64.ln(), 0.0, 0.0, 0.0]).unwrap();
        let s = p.score_sequence(&[], &[0, 0]).unwrap();
        assert!((s[0] - 0.4f64.ln()).abs() < 1e-12);
        assert!((s[1] - 0.25f64.ln()).abs() < 1e-12);
        p.set_logits(vec![0], vec![2f64.ln(), 0.0, 0.0, 0.0]).unwrap();
        let s = p.score_sequence(&[], &[0, 0]).unwrap();
        assert!((s[1] - 0.4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gradient_is_indicator_minus_probs() {
        let p = PolicyParams::new(vocab4(), 1).unwrap();
        let g = p.log_prob_gradient(&[BOS], 2).unwrap();
        assert_eq!(g.get(&[BOS]).unwrap(), &[-0.25, -0.25, 0.75, -0.25]);
        assert_eq!(g.entries().count(), 1);
    }

    #[test]
    fn entropy_extremes() {
        let mut p = PolicyParams::new(vocab4(), 1).unwrap();
        assert!((p.policy_entropy(&[BOS]).unwrap() - 4f64.ln()).abs() < 1e-15);
        p.set_logits(vec![BOS], vec![50.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(p.policy_entropy(&[BOS]).unwrap() < 1e-15);
    }

    #[test]
    fn sampling_is_deterministic_and_self_consistent() {
        let mut p = PolicyParams::new(vocab4(), 2).unwrap();
        p.set_logits(vec![BOS, 0], vec![0.3, -1.0, 2.0, 0.1]).unwrap();
        p.set_logits(vec![0, 2], vec![1.0, 1.0, -0.5, 0.7]).unwrap();
        let cfg = SamplingConfig {
            temperature: 1.0,
            top_p: 1.0,
            max_len: 8,
        };
        let a = p.sample_rollout(&[0], &cfg, &mut stream_rng(3, &[1])).unwrap();
        let b = p.sample_rollout(&[0], &cfg, &mut stream_rng(3, &[1])).unwrap();
        assert_eq!(a, b);
        let scored = p.score_sequence(&a.prompt, &a.response).unwrap();
        assert_eq!(scored, a.step_logprobs);
        for (pr, lp) in a.step_probs.iter().zip(&a.step_logprobs) {
            assert!((lp.exp() - pr).abs() < 1e-12);
            assert!(*pr > 0.0 && *pr <= 1.0);
        }
        assert_eq!(a.truncated, a.response.last() != Some(&3));
    }

    #[test]
    fn tempered_sampling_records_temperature_one_probs() {
        let mut p = PolicyParams::new(vocab4(), 1).unwrap();
        p.set_logits(vec![BOS], vec![1.0, 0.5, 0.0, -3.0]).unwrap();
        let cfg = SamplingConfig {
            temperature: 0.6,
            top_p: 0.95,
            max_len: 6,
        };
        for seed in 0..20 {
            let r = p.sample_rollout(&[1], &cfg, &mut stream_rng(seed, &[])).unwrap();
            assert_eq!(p.score_sequence(&r.prompt, &r.response).unwrap(), r.step_logprobs);
        }
    }

    #[test]
    fn tiny_top_p_is_greedy() {
        let mut p = PolicyParams::new(vocab4(), 1).unwrap();
        p.set_logits(vec![0], vec![0.0, 2.0, 1.0, 0.0]).unwrap();
        p.set_logits(vec![1], vec![0.0, 0.0, 3.0, 0.0]).unwrap();
        p.set_logits(vec![2], vec![0.0, 0.0, 0.0, 4.0]).unwrap();
        let cfg = SamplingConfig {
            temperature: 1.0,
            top_p: 1e-9,
            max_len: 10,
        };
        for seed in 0..10 {
            let r = p.sample_rollout(&[0], &cfg, &mut stream_rng(seed, &[])).unwrap();
            assert_eq!(r.response, vec![1, 2, 3]);
            assert!(!r.truncated);
        }
    }

    #[test]
    fn zero_max_len_is_an_error() {
        let p = PolicyParams::new(vocab4(), 1).unwrap();
        let cfg = SamplingConfig {
            max_len: 0,
            ..SamplingConfig::default()
        };
        assert!(p.sample_rollout(&[0], &cfg, &mut stream_rng(0, &[])).is_err());
    }

    #[test]
    fn truncation_flag() {
        let mut p = PolicyParams::new(vocab4(), 1).unwrap();
        for c in [BOS, 0, 1, 2] {
            p.set_logits(vec![c], vec![60.0, 0.0, 0.0, 0.0]).unwrap();
        }
        let cfg = SamplingConfig {
            max_len: 4,
            ..SamplingConfig::default()
        };
        let r = p.sample_rollout(&[1], &cfg, &mut stream_rng(0, &[])).unwrap();
        assert_eq!(r.response, vec![0; 4]);
        assert!(r.truncated);
    }

    #[test]
    fn nucleus_keeps_smallest_prefix() {
        let kept = nucleus(&[0.1, 0.5, 0.3, 0.1], 0.75);
        assert_eq!(kept[0], 0.0);
        assert_eq!(kept[3], 0.0);
        assert!((kept[1] - 0.625).abs() < 1e-15);
        assert!((kept[2] - 0.375).abs() < 1e-15);
        // ties broken by id
        let kept = nucleus(&[0.25; 4], 0.3);
        assert_eq!(kept, vec![0.5, 0.5, 0.0, 0.0]);
    }
}
