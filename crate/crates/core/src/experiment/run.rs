use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, tracked_success_sets, MetricsRecord};
use crate::trainer::Trainer;

/// Bumped whenever the metrics stream layout changes.
pub const ARTIFACT_VERSION: &str = concat!("progrpo-", env!("CARGO_PKG_VERSION"), "/stream-1");

const MANIFEST: &str = "manifest.json";
const CONFIG: &str = "config.toml";
const METRICS: &str = "metrics.jsonl";
const METRICS_CSV: &str = "metrics.csv";
const POLICY: &str = "policy.txt";
const ABORT: &str = "abort.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Completed,
    Aborted { reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutputs {
    pub config: String,
    pub metrics: String,
    pub metrics_csv: String,
    pub policy: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort: Option<String>,
}

/// Everything needed to reproduce a run. Output paths are relative to the
/// manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub algorithm: String,
    pub master_seed: u64,
    pub config: ExperimentConfig,
    pub started_at: u64,
    pub finished_at: Option<u64>,
    /// Steps completed; the checkpoint in `outputs.policy` is taken after them.
    pub steps_completed: u64,
    pub status: RunStatus,
    pub outputs: RunOutputs,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn save(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join(MANIFEST), &serde_json::to_string_pretty(self)?)
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub final_record: Option<MetricsRecord>,
}

impl RunOutcome {
    pub fn completed(&self) -> bool {
        self.manifest.status == RunStatus::Completed
    }
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

struct Stream {
    path: PathBuf,
    out: BufWriter<File>,
}

impl Stream {
    fn create(path: PathBuf) -> Result<Self> {
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            path,
            out: BufWriter::new(file),
        })
    }

    fn line(&mut self, text: &str) -> Result<()> {
        writeln!(self.out, "{text}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

/// Trains per `cfg`, writing the manifest, effective config, metrics stream
/// (JSON lines and CSV) and final policy into `dir`.
///
/// Invalid configs and I/O failures are errors. A non-finite abort mid-run is
/// reported through the returned manifest's status, with partial outputs and
/// an `abort.json` record left on disk.
pub fn run(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    let task = cfg.task.build()?;
    let train = cfg.train_config();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut manifest = RunManifest {
        artifact_version: ARTIFACT_VERSION.to_string(),
        algorithm: train.algorithm.to_string(),
        master_seed: train.master_seed,
        config: cfg.clone(),
        started_at: now(),
        finished_at: None,
        steps_completed: 0,
        status: RunStatus::Running,
        outputs: RunOutputs {
            config: CONFIG.into(),
            metrics: METRICS.into(),
            metrics_csv: METRICS_CSV.into(),
            policy: POLICY.into(),
            abort: None,
        },
    };
    write_file(&dir.join(CONFIG), &cfg.to_toml()?)?;
    manifest.save(dir)?;

    let sets = match tracked_success_sets(&task, cfg.metrics.manifold_limit) {
        Ok(s) => s,
        Err(Error::EnumerationBudget { .. }) => Vec::new(),
        Err(e) => return Err(e),
    };
    let mut jsonl = Stream::create(dir.join(METRICS))?;
    let mut csv = Stream::create(dir.join(METRICS_CSV))?;
    csv.line(&MetricsRecord::csv_header(&cfg.metrics.pass_k))?;

    let mut trainer = Trainer::new(task.clone(), train.clone())?;
    let mut last = None;
    let total = train.total_steps;
    for step in 0..total {
        let report = match trainer.train_step() {
            Ok(r) => r,
            Err(e @ Error::NonFinite { .. }) => {
                let record = serde_json::json!({ "step": step, "error": e.to_string() });
                write_file(&dir.join(ABORT), &serde_json::to_string_pretty(&record)?)?;
                manifest.outputs.abort = Some(ABORT.into());
                manifest.status = RunStatus::Aborted { reason: e.to_string() };
                break;
            }
            Err(e) => return Err(e),
        };
        let tracked = !sets.is_empty() && ((step + 1) % cfg.metrics.manifold_interval == 0 || step + 1 == total);
        let eval = evaluate(
            trainer.params(),
            &task,
            &cfg.metrics,
            train.master_seed,
            step,
            tracked.then_some(sets.as_slice()),
        )?;
        let record = MetricsRecord::new(&report.stats, eval)?;
        jsonl.line(&serde_json::to_string(&record)?)?;
        csv.line(&record.csv_row())?;
        manifest.steps_completed = step + 1;
        last = Some(record);
    }

    trainer.params().save(dir.join(POLICY))?;
    if manifest.status == RunStatus::Running {
        manifest.status = RunStatus::Completed;
    }
    manifest.finished_at = Some(now());
    manifest.save(dir)?;
    Ok(RunOutcome {
        dir: dir.to_path_buf(),
        manifest,
        final_record: last,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub identical: bool,
    pub original_lines: usize,
    pub replay_lines: usize,
    /// 1-based line number of the first differing record.
    pub first_difference: Option<usize>,
}

/// Re-runs the config recorded in a manifest into `dir` and compares the new
/// metrics stream with the original byte for byte.
pub fn replay(manifest_path: &Path, dir: &Path) -> Result<ReplayReport> {
    let manifest = RunManifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let original_path = base.join(&manifest.outputs.metrics);
    let original = fs::read(&original_path).map_err(|e| Error::io(&original_path, e))?;
    let outcome = run(&manifest.config, dir)?;
    let new_path = outcome.dir.join(&outcome.manifest.outputs.metrics);
    let fresh = fs::read(&new_path).map_err(|e| Error::io(&new_path, e))?;
    let a: Vec<&[u8]> = original.split(|&b| b == b'\n').filter(|l| !l.is_empty()).collect();
    let b: Vec<&[u8]> = fresh.split(|&b| b == b'\n').filter(|l| !l.is_empty()).collect();
    let first_difference = (0..a.len().max(b.len()))
        .find(|&i| a.get(i) != b.get(i))
        .map(|i| i + 1);
    Ok(ReplayReport {
        identical: original == fresh,
        original_lines: a.len(),
        replay_lines: b.len(),
        first_difference,
    })
}
