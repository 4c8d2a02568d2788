//! Versioned text format for policy checkpoints.
//!
//! ```text
//! progrpo-policy 1
//! vocab_size 4
//! order 2
//! version 17
//! eos <eos>
//! vocab a b c <eos>
//! entries 1
//! ^ 0 | 0.5 -0.25 0 1e-7
//! ```
//!
//! Context ids are written as integers (`^` for BOS); logits use the shortest
//! representation that parses back to the same bits.

use std::fmt::Write as _;
use std::path::Path;

use super::{PolicyParams, TokenId, Vocab, BOS};
use crate::error::{Error, Result};

const MAGIC: &str = "progrpo-policy";
const FORMAT_VERSION: u32 = 1;

impl PolicyParams {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC} {FORMAT_VERSION}");
        let _ = writeln!(out, "vocab_size {}", self.vocab.len());
        let _ = writeln!(out, "order {}", self.order);
        let _ = writeln!(out, "version {}", self.version);
        let _ = writeln!(
            out,
            "eos {}",
            self.vocab.symbol(self.vocab.eos()).unwrap_or_default()
        );
        let _ = writeln!(out, "vocab {}", self.vocab.symbols().join(" "));
        let _ = writeln!(out, "entries {}", self.table.len());
        for (ctx, logits) in &self.table {
            let key: Vec<String> = ctx
                .iter()
                .map(|&t| if t == BOS { "^".into() } else { t.to_string() })
                .collect();
            let vals: Vec<String> = logits.iter().map(|z| format!("{z:?}")).collect();
            let _ = writeln!(out, "{} | {}", key.join(" "), vals.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut header = |key: &str| -> Result<(usize, String)> {
            let (n, line) = lines.next().ok_or(Error::PolicyFormat {
                line: 0,
                reason: format!("missing `{key}` line"),
            })?;
            let rest = line.strip_prefix(key).and_then(|r| r.strip_prefix(' '));
            rest.map(|r| (n, r.to_string())).ok_or(Error::PolicyFormat {
                line: n,
                reason: format!("expected `{key} ...`"),
            })
        };
        let (n, magic) = header(MAGIC)?;
        if magic.trim() != FORMAT_VERSION.to_string() {
            return Err(fmt_err(n, format!("unsupported format version {magic}")));
        }
        let (n, v) = header("vocab_size")?;
        let vocab_size: usize = v.trim().parse().map_err(|_| fmt_err(n, "bad vocab_size"))?;
        let (n, o) = header("order")?;
        let order: usize = o.trim().parse().map_err(|_| fmt_err(n, "bad order"))?;
        let (n, ver) = header("version")?;
        let version: u64 = ver.trim().parse().map_err(|_| fmt_err(n, "bad version"))?;
        let (_, eos) = header("eos")?;
        let (n, syms) = header("vocab")?;
        let vocab = Vocab::new(syms.split(' '), eos.trim()).map_err(|e| fmt_err(n, e.to_string()))?;
        if vocab.len() != vocab_size {
            return Err(fmt_err(n, "vocab listing disagrees with vocab_size"));
        }
        let (n, e) = header("entries")?;
        let entries: usize = e.trim().parse().map_err(|_| fmt_err(n, "bad entries"))?;

        let mut params = PolicyParams::new(vocab, order).map_err(|e| fmt_err(n, e.to_string()))?;
        let mut seen = 0;
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let (key, vals) = line
                .split_once(" | ")
                .ok_or_else(|| fmt_err(n, "expected `<context> | <logits>`"))?;
            let ctx = key
                .split(' ')
                .map(|t| {
                    if t == "^" {
                        Ok(BOS)
                    } else {
                        t.parse::<TokenId>().map_err(|_| fmt_err(n, format!("bad token {t:?}")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let logits = vals
                .split(' ')
                .map(|z| z.parse::<f64>().map_err(|_| fmt_err(n, format!("bad logit {z:?}"))))
                .collect::<Result<Vec<_>>>()?;
            if ctx.iter().any(|&t| t != BOS && t as usize >= vocab_size) {
                return Err(fmt_err(n, "context token out of range"));
            }
            params
                .set_logits(ctx, logits)
                .map_err(|e| fmt_err(n, e.to_string()))?;
            seen += 1;
        }
        if seen != entries {
            return Err(fmt_err(0, format!("header promises {entries} entries, found {seen}")));
        }
        params.set_version(version);
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

fn fmt_err(line: usize, reason: impl Into<String>) -> Error {
    Error::PolicyFormat {
        line,
        reason: reason.into(),
    }
}
