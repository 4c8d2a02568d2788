//! Experiment configs, seeded runs with on-disk artifacts, sweeps and replay.

mod run;
mod sweep;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::advantage::{ArmConfig, ArmMode};
use crate::error::{Error, Result};
use crate::metrics::MetricsConfig;
use crate::tasks::TaskConfig;
use crate::trainer::{Algorithm, TrainConfig};

pub use run::{replay, run, ReplayReport, RunManifest, RunOutcome, RunStatus, ARTIFACT_VERSION};
pub use sweep::{apply_value, sweep, ChildRun, Spread, SweepAxis, SweepConfig, SweepOutcome, SweepRow};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "PROGRPO_OUT";

/// Output root from [`OUTPUT_ROOT_ENV`], falling back to `runs`.
pub fn output_root() -> std::path::PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .map(Into::into)
        .unwrap_or_else(|| "runs".into())
}

/// A complete experiment file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub arm: ArmConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

/// Command-line overrides; each `Some` replaces the file's value.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub algorithm: Option<Algorithm>,
    pub alpha: Option<f64>,
    pub arm_mode: Option<ArmMode>,
    pub seed: Option<u64>,
    pub total_steps: Option<u64>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::ConfigParse(e.to_string()))?;
        if !table.contains_key("task") {
            return Err(Error::config("task", "missing [task] section"));
        }
        let cfg: Self = toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.task.build()?;
        self.train_config().validate()?;
        self.metrics.validate()?;
        if let Some(s) = &self.sweep {
            s.validate()?;
        }
        Ok(())
    }

    /// The `[train]` section with the `[arm]` section merged in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            arm: self.arm,
            ..self.train.clone()
        }
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(a) = o.algorithm {
            self.train.algorithm = a;
        }
        if let Some(a) = o.alpha {
            self.arm.alpha = a;
        }
        if let Some(m) = o.arm_mode {
            self.arm.mode = m;
        }
        if let Some(s) = o.seed {
            self.train.master_seed = s;
        }
        if let Some(n) = o.total_steps {
            self.train.total_steps = n;
        }
        self.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{TaskKind, ValueSet};

    const MINIMAL: &str = r#"
[task]
kind = "sum_to_target"
max_response_len = 2
targets = { min = 2, max = 5 }
"#;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.task.kind, TaskKind::SumToTarget);
        assert_eq!(cfg.task.targets, Some(ValueSet::Range { min: 2, max: 5 }));
        assert_eq!(cfg.train, TrainConfig::default());
        assert_eq!(cfg.arm, ArmConfig::default());
    }

    #[test]
    fn round_trip_is_identity() {
        let mut cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        cfg.arm.alpha = 0.7;
        cfg.train.learning_rate = 0.1 + 0.2;
        cfg.sweep = Some(SweepConfig {
            axis: SweepAxis::Alpha,
            values: vec!["0".into(), "0.3".into()],
            seeds: vec![1, 2],
        });
        let text = cfg.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml().unwrap(), text);
    }

    #[test]
    fn missing_task_is_named() {
        let err = ExperimentConfig::from_toml("[train]\ngroup_size = 4\n").unwrap_err();
        assert!(matches!(&err, Error::InvalidConfig { field, .. } if field == "task"), "{err}");
    }

    #[test]
    fn field_level_diagnostics() {
        let bad = format!("{MINIMAL}\n[train]\ngroup_size = 1\n");
        let err = ExperimentConfig::from_toml(&bad).unwrap_err().to_string();
        assert!(err.contains("train.group_size"), "{err}");
        let bad = format!("{MINIMAL}\n[arm]\nalpha = -1.0\n");
        assert!(ExperimentConfig::from_toml(&bad).unwrap_err().to_string().contains("arm.alpha"));
        let bad = format!("{MINIMAL}\n[train]\nbogus = 3\n");
        assert!(ExperimentConfig::from_toml(&bad).unwrap_err().to_string().contains("bogus"));
        let bad = "[task]\nkind = \"grid_paths\"\nmax_response_len = 4\n";
        assert!(ExperimentConfig::from_toml(bad).unwrap_err().to_string().contains("task.grids"));
    }

    #[test]
    fn overrides_replace_file_values() {
        let mut cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        cfg.apply(&Overrides {
            algorithm: Some(Algorithm::Grpo),
            alpha: Some(0.0),
            arm_mode: Some(ArmMode::OneMinusBoth),
            seed: Some(7),
            total_steps: Some(3),
        })
        .unwrap();
        assert_eq!(cfg.train.algorithm, Algorithm::Grpo);
        assert_eq!(cfg.train_config().arm.mode, ArmMode::OneMinusBoth);
        assert_eq!((cfg.train.master_seed, cfg.train.total_steps), (7, 3));
        assert!(cfg
            .apply(&Overrides {
                alpha: Some(f64::NAN),
                ..Overrides::default()
            })
            .is_err());
    }

    #[test]
    fn shipped_configs_parse() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        for name in ["grpo_vs_progrpo_sumtarget", "alpha_sweep", "arm_mode_ablation"] {
            let cfg = ExperimentConfig::load(&dir.join(format!("{name}.toml"))).unwrap();
            assert_eq!(cfg.task.kind, TaskKind::SumToTarget, "{name}");
        }
    }
}
