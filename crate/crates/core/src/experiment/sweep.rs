use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{run, ExperimentConfig};
use crate::advantage::ArmMode;
use crate::error::{Error, Result};
use crate::metrics::{quantile, MetricsRecord};
use crate::trainer::Algorithm;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Algo,
    Alpha,
    ArmMode,
    Seed,
}

impl SweepAxis {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepAxis::Algo => "algo",
            SweepAxis::Alpha => "alpha",
            SweepAxis::ArmMode => "arm_mode",
            SweepAxis::Seed => "seed",
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "algo" => Ok(SweepAxis::Algo),
            "alpha" => Ok(SweepAxis::Alpha),
            "arm_mode" | "arm-mode" => Ok(SweepAxis::ArmMode),
            "seed" => Ok(SweepAxis::Seed),
            _ => Err(Error::InvalidArgument(format!(
                "unknown sweep axis {s:?} (expected algo, alpha, arm-mode or seed)"
            ))),
        }
    }
}

/// `[sweep]` section: one child run per value and seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<String>,
    /// Seeds to repeat each value with; empty means the config's seed.
    /// Ignored when sweeping the seed axis itself.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub seeds: Vec<u64>,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::config("sweep.values", "must be nonempty"));
        }
        for v in &self.values {
            parse_value(self.axis, v).map_err(|e| Error::config("sweep.values", e.to_string()))?;
        }
        Ok(())
    }
}

enum AxisValue {
    Algo(Algorithm),
    Alpha(f64),
    ArmMode(ArmMode),
    Seed(u64),
}

fn parse_value(axis: SweepAxis, value: &str) -> Result<AxisValue> {
    let bad = |e: &dyn fmt::Display| Error::InvalidArgument(format!("bad {axis} value {value:?}: {e}"));
    Ok(match axis {
        SweepAxis::Algo => AxisValue::Algo(value.parse().map_err(|e| bad(&e))?),
        SweepAxis::Alpha => {
            let a: f64 = value.parse().map_err(|e| bad(&e))?;
            if !(a >= 0.0 && a.is_finite()) {
                return Err(bad(&"alpha must be a finite value >= 0"));
            }
            AxisValue::Alpha(a)
        }
        SweepAxis::ArmMode => AxisValue::ArmMode(value.parse().map_err(|e| bad(&e))?),
        SweepAxis::Seed => AxisValue::Seed(value.parse().map_err(|e| bad(&e))?),
    })
}

/// Copy of `base` with one axis set to `value` and no sweep section.
pub fn apply_value(base: &ExperimentConfig, axis: SweepAxis, value: &str) -> Result<ExperimentConfig> {
    let mut cfg = base.clone();
    cfg.sweep = None;
    match parse_value(axis, value)? {
        AxisValue::Algo(a) => cfg.train.algorithm = a,
        AxisValue::Alpha(a) => cfg.arm.alpha = a,
        AxisValue::ArmMode(m) => cfg.arm.mode = m,
        AxisValue::Seed(s) => cfg.train.master_seed = s,
    }
    Ok(cfg)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub iqr: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let (q25, q75) = (quantile(&v, 0.25), quantile(&v, 0.75));
        Some(Self {
            median: quantile(&v, 0.5),
            q25,
            q75,
            iqr: q75 - q25,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChildRun {
    pub value: String,
    pub seed: u64,
    pub dir: PathBuf,
    pub final_record: Option<MetricsRecord>,
    pub error: Option<String>,
}

/// Per-value aggregate of the children's final records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub runs: usize,
    pub failures: usize,
    pub pass_at: BTreeMap<usize, Spread>,
    pub token_entropy: Option<Spread>,
    pub manifold_entropy: Option<Spread>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
    pub children: Vec<ChildRun>,
}

fn spread_of(finals: &[&MetricsRecord], f: impl Fn(&MetricsRecord) -> Option<f64>) -> Option<Spread> {
    Spread::of(&finals.iter().filter_map(|r| f(r)).collect::<Vec<_>>())
}

fn summarize_value(value: &str, children: &[ChildRun]) -> SweepRow {
    let mine: Vec<&ChildRun> = children.iter().filter(|c| c.value == value).collect();
    let finals: Vec<&MetricsRecord> = mine.iter().filter_map(|c| c.final_record.as_ref()).collect();
    let ks: Vec<usize> = finals.first().map(|r| r.pass_at.keys().copied().collect()).unwrap_or_default();
    let pass_at = ks
        .into_iter()
        .filter_map(|k| spread_of(&finals, |r| r.pass_at.get(&k).copied()).map(|s| (k, s)))
        .collect();
    SweepRow {
        value: value.to_string(),
        runs: mine.len(),
        failures: mine.iter().filter(|c| c.error.is_some()).count(),
        pass_at,
        token_entropy: spread_of(&finals, |r| Some(r.token_entropy.mean)),
        manifold_entropy: spread_of(&finals, |r| r.manifold_entropy_mean),
    }
}

fn dir_name(value: &str) -> String {
    value
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

fn summary_csv(outcome: &SweepOutcome) -> String {
    let ks: Vec<usize> = outcome
        .rows
        .iter()
        .flat_map(|r| r.pass_at.keys().copied())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut header = vec![outcome.axis.to_string(), "runs".into(), "failures".into()];
    for k in &ks {
        header.push(format!("pass_at_{k}_median"));
        header.push(format!("pass_at_{k}_iqr"));
    }
    header.extend(
        ["entropy_median", "entropy_iqr", "manifold_entropy_median", "manifold_entropy_iqr"].map(String::from),
    );
    let mut lines = vec![header.join(",")];
    let pair = |s: Option<&Spread>| match s {
        Some(s) => [format!("{:?}", s.median), format!("{:?}", s.iqr)],
        None => [String::new(), String::new()],
    };
    for r in &outcome.rows {
        let mut cols = vec![r.value.clone(), r.runs.to_string(), r.failures.to_string()];
        for k in &ks {
            cols.extend(pair(r.pass_at.get(k)));
        }
        cols.extend(pair(r.token_entropy.as_ref()));
        cols.extend(pair(r.manifold_entropy.as_ref()));
        lines.push(cols.join(","));
    }
    lines.join("\n") + "\n"
}

/// Runs every (value, seed) child under `root/<axis>-<value>/seed-<seed>`
/// sequentially. A failing child is recorded and the sweep continues.
/// Writes `summary.json` and `summary.csv` into `root`.
pub fn sweep(base: &ExperimentConfig, spec: &SweepConfig, root: &Path) -> Result<SweepOutcome> {
    spec.validate()?;
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let seeds = if spec.axis == SweepAxis::Seed || spec.seeds.is_empty() {
        vec![base.train.master_seed]
    } else {
        spec.seeds.clone()
    };
    let mut children = Vec::new();
    for value in &spec.values {
        for &seed in &seeds {
            let mut cfg = apply_value(base, spec.axis, value)?;
            if spec.axis != SweepAxis::Seed {
                cfg.train.master_seed = seed;
            }
            let seed = cfg.train.master_seed;
            let dir = root
                .join(format!("{}-{}", spec.axis, dir_name(value)))
                .join(format!("seed-{seed}"));
            let child = match run(&cfg, &dir) {
                Ok(out) => ChildRun {
                    value: value.clone(),
                    seed,
                    dir,
                    error: match &out.manifest.status {
                        super::RunStatus::Aborted { reason } => Some(reason.clone()),
                        _ => None,
                    },
                    final_record: out.final_record,
                },
                Err(e) => ChildRun {
                    value: value.clone(),
                    seed,
                    dir,
                    final_record: None,
                    error: Some(e.to_string()),
                },
            };
            children.push(child);
        }
    }
    let rows = spec.values.iter().map(|v| summarize_value(v, &children)).collect();
    let outcome = SweepOutcome {
        axis: spec.axis,
        rows,
        children,
    };
    let json_path = root.join("summary.json");
    fs::write(&json_path, serde_json::to_string_pretty(&outcome)?).map_err(|e| Error::io(&json_path, e))?;
    let csv_path = root.join("summary.csv");
    fs::write(&csv_path, summary_csv(&outcome)).map_err(|e| Error::io(&csv_path, e))?;
    Ok(outcome)
}
