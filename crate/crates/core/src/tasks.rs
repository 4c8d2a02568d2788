//! Synthetic tasks with binary verifiers.
//!
//! Prompts and responses share one vocabulary so the policy that answers a
//! prompt can also score it. Every response is a run of content tokens
//! followed by EOS; `max_response_len` bounds the content tokens.
//!
//! - `sum_to_target`: prompt `t =` (target in decimal digits); a response is
//!   correct when it is one or more digits summing to `t`.
//! - `balanced_brackets`: prompt `n =`; correct responses are balanced
//!   bracket strings of length exactly `n`.
//! - `grid_paths`: prompt `m x n =`; correct responses are moves from the
//!   top-left to the bottom-right corner of an `m × n` grid in exactly `m + n`
//!   steps (so only monotone D/R paths qualify).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{SamplingConfig, TokenId, Vocab};

pub const EOS_SYMBOL: &str = "<eos>";
const DIGITS: [&str; 10] = ["0", "1", "2", "3", "4", "5", "6", "7", "8", "9"];

/// Largest number of candidate sequences [`TaskSpec::enumerate_success_set`]
/// will scan.
pub const ENUMERATION_LIMIT: u128 = 100_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    SumToTarget,
    BalancedBrackets,
    GridPaths,
}

/// Decoded task instance behind a prompt.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Instance {
    Sum { target: u32 },
    Brackets { length: u32 },
    Grid { rows: u32, cols: u32 },
}

impl Instance {
    /// Scalar difficulty knob: target, bracket length or path length.
    pub fn difficulty(&self) -> u32 {
        match *self {
            Instance::Sum { target } => target,
            Instance::Brackets { length } => length,
            Instance::Grid { rows, cols } => rows + cols,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub tokens: Vec<TokenId>,
    pub instance: Instance,
}

/// All distinct correct responses (EOS included) for one prompt.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuccessSet {
    pub prompt: Vec<TokenId>,
    pub members: Vec<Vec<TokenId>>,
}

impl SuccessSet {
    pub fn cardinality(&self) -> usize {
        self.members.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    kind: TaskKind,
    vocab: Vocab,
    prompts: Vec<Prompt>,
    max_response_len: usize,
}

fn number_tokens(vocab: &Vocab, n: u32) -> Vec<TokenId> {
    n.to_string()
        .chars()
        .map(|c| vocab.id(&c.to_string()).expect("digit symbols are in every task vocabulary"))
        .collect()
}

impl TaskSpec {
    fn vocab_for(kind: TaskKind) -> Vocab {
        let mut symbols: Vec<&str> = match kind {
            TaskKind::SumToTarget => vec![],
            TaskKind::BalancedBrackets => vec!["(", ")"],
            TaskKind::GridPaths => vec!["U", "D", "L", "R", "x"],
        };
        symbols.extend(DIGITS);
        symbols.push("=");
        symbols.push(EOS_SYMBOL);
        Vocab::new(symbols, EOS_SYMBOL).expect("built-in vocabularies are valid")
    }

    fn build(kind: TaskKind, instances: Vec<Instance>, max_response_len: usize) -> Result<Self> {
        if instances.is_empty() {
            return Err(Error::InvalidTask("prompt space is empty".into()));
        }
        if max_response_len == 0 {
            return Err(Error::InvalidTask("max_response_len must be positive".into()));
        }
        let vocab = Self::vocab_for(kind);
        let eq = vocab.id("=").expect("`=` present");
        let mut prompts = Vec::with_capacity(instances.len());
        for inst in instances {
            let max = max_response_len as u64;
            let tokens = match inst {
                Instance::Sum { target } => {
                    if u64::from(target) > 9 * max {
                        return Err(Error::InvalidTask(format!(
                            "target {target} unreachable with {max_response_len} digits"
                        )));
                    }
                    let mut t = number_tokens(&vocab, target);
                    t.push(eq);
                    t
                }
                Instance::Brackets { length } => {
                    if length == 0 || length % 2 == 1 || u64::from(length) > max {
                        return Err(Error::InvalidTask(format!(
                            "bracket length {length} must be even, positive and at most {max_response_len}"
                        )));
                    }
                    let mut t = number_tokens(&vocab, length);
                    t.push(eq);
                    t
                }
                Instance::Grid { rows, cols } => {
                    if u64::from(rows) + u64::from(cols) > max || rows + cols == 0 {
                        return Err(Error::InvalidTask(format!(
                            "grid {rows}x{cols} needs a path of length {} (budget {max_response_len})",
                            rows + cols
                        )));
                    }
                    let mut t = number_tokens(&vocab, rows);
                    t.push(vocab.id("x").expect("`x` present"));
                    t.extend(number_tokens(&vocab, cols));
                    t.push(eq);
                    t
                }
            };
            prompts.push(Prompt {
                tokens,
                instance: inst,
            });
        }
        Ok(Self {
            kind,
            vocab,
            prompts,
            max_response_len,
        })
    }

    pub fn sum_to_target(targets: &[u32], max_digits: usize) -> Result<Self> {
        let inst = targets.iter().map(|&target| Instance::Sum { target }).collect();
        Self::build(TaskKind::SumToTarget, inst, max_digits)
    }

    pub fn balanced_brackets(lengths: &[u32], max_response_len: usize) -> Result<Self> {
        let inst = lengths.iter().map(|&length| Instance::Brackets { length }).collect();
        Self::build(TaskKind::BalancedBrackets, inst, max_response_len)
    }

    pub fn grid_paths(grids: &[(u32, u32)], max_response_len: usize) -> Result<Self> {
        let inst = grids
            .iter()
            .map(|&(rows, cols)| Instance::Grid { rows, cols })
            .collect();
        Self::build(TaskKind::GridPaths, inst, max_response_len)
    }

    pub fn kind(&self) -> TaskKind {
        self.kind
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn prompts(&self) -> &[Prompt] {
        &self.prompts
    }

    pub fn max_response_len(&self) -> usize {
        self.max_response_len
    }

    /// `cfg` with generation capped at `max_response_len + 1` tokens. Longer
    /// responses can never verify, so sampling past the cap is wasted work.
    pub fn capped_sampling(&self, cfg: &SamplingConfig) -> SamplingConfig {
        SamplingConfig {
            max_len: cfg.max_len.min(self.max_response_len + 1),
            ..*cfg
        }
    }

    /// Uniform draw from the prompt space.
    pub fn sample_prompt<'a, R: Rng + ?Sized>(&'a self, rng: &mut R) -> &'a Prompt {
        &self.prompts[rng.gen_range(0..self.prompts.len())]
    }

    fn parse_number(&self, tokens: &[TokenId]) -> Option<u32> {
        if tokens.is_empty() || tokens.len() > 9 {
            return None;
        }
        tokens.iter().try_fold(0u32, |acc, &t| {
            let d = self.vocab.symbol(t)?.parse::<u32>().ok()?;
            Some(acc * 10 + d)
        })
    }

    /// Decodes the instance a prompt encodes, if it is well formed.
    pub fn parse_prompt(&self, prompt: &[TokenId]) -> Option<Instance> {
        let (&last, body) = prompt.split_last()?;
        if self.vocab.symbol(last)? != "=" {
            return None;
        }
        match self.kind {
            TaskKind::SumToTarget => Some(Instance::Sum {
                target: self.parse_number(body)?,
            }),
            TaskKind::BalancedBrackets => Some(Instance::Brackets {
                length: self.parse_number(body)?,
            }),
            TaskKind::GridPaths => {
                let x = self.vocab.id("x")?;
                let split = body.iter().position(|&t| t == x)?;
                Some(Instance::Grid {
                    rows: self.parse_number(&body[..split])?,
                    cols: self.parse_number(&body[split + 1..])?,
                })
            }
        }
    }

    /// Binary reward: 1 iff the response is EOS-terminated, within budget and
    /// correct for the prompt. Malformed prompts or responses score 0.
    pub fn verify(&self, prompt: &[TokenId], response: &[TokenId]) -> u8 {
        let Some(instance) = self.parse_prompt(prompt) else {
            return 0;
        };
        let eos = self.vocab.eos();
        let Some((&last, content)) = response.split_last() else {
            return 0;
        };
        if last != eos
            || content.len() > self.max_response_len
            || content.iter().any(|&t| t == eos || !self.vocab.contains(t))
        {
            return 0;
        }
        let syms: Vec<&str> = content
            .iter()
            .map(|&t| self.vocab.symbol(t).expect("checked above"))
            .collect();
        let ok = match instance {
            Instance::Sum { target } => {
                !syms.is_empty()
                    && syms
                        .iter()
                        .try_fold(0u32, |acc, s| s.parse::<u32>().ok().filter(|d| *d < 10).map(|d| acc + d))
                        == Some(target)
            }
            Instance::Brackets { length } => {
                syms.len() == length as usize && {
                    let mut depth = 0i64;
                    syms.iter().all(|s| {
                        depth += match *s {
                            "(" => 1,
                            ")" => -1,
                            _ => return false,
                        };
                        depth >= 0
                    }) && depth == 0
                }
            }
            Instance::Grid { rows, cols } => {
                syms.len() == (rows + cols) as usize && {
                    let (mut r, mut c) = (0i64, 0i64);
                    syms.iter().all(|s| {
                        match *s {
                            "U" => r -= 1,
                            "D" => r += 1,
                            "L" => c -= 1,
                            "R" => c += 1,
                            _ => return false,
                        }
                        (0..=i64::from(rows)).contains(&r) && (0..=i64::from(cols)).contains(&c)
                    }) && r == i64::from(rows)
                        && c == i64::from(cols)
                }
            }
        };
        u8::from(ok)
    }

    /// Number of EOS-terminated candidates with at most `max_response_len`
    /// content tokens.
    pub fn candidate_count(&self) -> u128 {
        let branching = (self.vocab.len() - 1) as u128;
        let mut total: u128 = 0;
        let mut layer: u128 = 1;
        for _ in 0..=self.max_response_len {
            total = total.saturating_add(layer);
            layer = layer.saturating_mul(branching);
        }
        total
    }

    /// Exhaustive depth-first enumeration of every correct response.
    pub fn enumerate_success_set(&self, prompt: &[TokenId]) -> Result<SuccessSet> {
        let candidates = self.candidate_count();
        if candidates > ENUMERATION_LIMIT {
            return Err(Error::EnumerationBudget {
                candidates,
                limit: ENUMERATION_LIMIT,
            });
        }
        let eos = self.vocab.eos();
        let content: Vec<TokenId> = (0..self.vocab.len() as TokenId).filter(|&t| t != eos).collect();
        let mut members = Vec::new();
        let mut buf = Vec::with_capacity(self.max_response_len + 1);
        self.dfs(prompt, &content, &mut buf, &mut members);
        Ok(SuccessSet {
            prompt: prompt.to_vec(),
            members,
        })
    }

    fn dfs(&self, prompt: &[TokenId], content: &[TokenId], buf: &mut Vec<TokenId>, out: &mut Vec<Vec<TokenId>>) {
        buf.push(self.vocab.eos());
        if self.verify(prompt, buf) == 1 {
            out.push(buf.clone());
        }
        buf.pop();
        if buf.len() == self.max_response_len {
            return;
        }
        for &t in content {
            buf.push(t);
            self.dfs(prompt, content, buf, out);
            buf.pop();
        }
    }
}

/// How a config lists the prompt space: explicit values or an inclusive range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ValueSet {
    List(Vec<u32>),
    Range { min: u32, max: u32 },
}

impl ValueSet {
    pub fn values(&self) -> Vec<u32> {
        match self {
            ValueSet::List(v) => v.clone(),
            ValueSet::Range { min, max } => (*min..=*max).collect(),
        }
    }
}

/// `[task]` section of an experiment config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub kind: TaskKind,
    pub max_response_len: usize,
    /// sum_to_target prompt space.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<ValueSet>,
    /// balanced_brackets prompt space.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lengths: Option<ValueSet>,
    /// grid_paths prompt space as `[rows, cols]` pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grids: Option<Vec<[u32; 2]>>,
}

impl TaskConfig {
    pub fn build(&self) -> Result<TaskSpec> {
        let missing = |f: &str| Error::config(format!("task.{f}"), format!("required for kind {:?}", self.kind));
        let wrap = |e: Error| Error::config("task", e.to_string());
        match self.kind {
            TaskKind::SumToTarget => {
                let targets = self.targets.as_ref().ok_or_else(|| missing("targets"))?;
                TaskSpec::sum_to_target(&targets.values(), self.max_response_len).map_err(wrap)
            }
            TaskKind::BalancedBrackets => {
                let lengths = self.lengths.as_ref().ok_or_else(|| missing("lengths"))?;
                TaskSpec::balanced_brackets(&lengths.values(), self.max_response_len).map_err(wrap)
            }
            TaskKind::GridPaths => {
                let grids = self.grids.as_ref().ok_or_else(|| missing("grids"))?;
                let pairs: Vec<(u32, u32)> = grids.iter().map(|g| (g[0], g[1])).collect();
                TaskSpec::grid_paths(&pairs, self.max_response_len).map_err(wrap)
            }
        }
    }
}
