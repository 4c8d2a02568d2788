//! `progrpo`: batch front-end for training runs, sweeps, replay and oracles.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use progrpo::advantage::ArmMode;
use progrpo::experiment::{self, ExperimentConfig, Overrides, RunStatus, SweepAxis, SweepConfig, OUTPUT_ROOT_ENV};
use progrpo::tasks::TaskConfig;
use progrpo::trainer::gradcheck::surrogate_gradient_check;
use progrpo::trainer::{Algorithm, ClipConfig, Normalization};

#[derive(Parser)]
#[command(name = "progrpo", version, about = "Group-relative policy optimization laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train once and write manifest, metrics stream and final policy.
    Run(RunArgs),
    /// Run one child per axis value (and seed) and summarize final metrics.
    Sweep(SweepArgs),
    /// Re-run a manifest and compare the metrics stream byte for byte.
    Replay {
        manifest: PathBuf,
        /// Where to write the replayed run (default: a `replay` directory next to the manifest).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the success set of every prompt of a task.
    Enumerate {
        /// Experiment config or a bare `[task]` table.
        config: PathBuf,
    },
    /// Randomized finite-difference check of the surrogate gradient.
    CheckGradients {
        #[arg(long, default_value_t = 200)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML with [task], [train], [arm], [metrics]).
    config: PathBuf,
    /// Output root; defaults to $PROGRPO_OUT or `runs`.
    #[arg(long, env = OUTPUT_ROOT_ENV)]
    out: Option<PathBuf>,
    #[arg(long)]
    algo: Option<Algorithm>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    arm_mode: Option<ArmMode>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        cfg.apply(&Overrides {
            algorithm: self.algo,
            alpha: self.alpha,
            arm_mode: self.arm_mode,
            seed: self.seed,
            total_steps: self.steps,
        })?;
        Ok(cfg)
    }

    fn root(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(experiment::output_root)
    }

    fn stem(&self) -> String {
        self.config
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into())
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Run directory name under the output root.
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Axis to sweep: algo, alpha, arm-mode or seed. Overrides the config's [sweep].
    #[arg(long)]
    axis: Option<SweepAxis>,
    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',')]
    values: Vec<String>,
    /// Comma-separated seeds to repeat every value with.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let cfg = args.common.load()?;
    let name = args.name.unwrap_or_else(|| {
        format!("{}-{}-seed{}", args.common.stem(), cfg.train.algorithm, cfg.train.master_seed)
    });
    let dir = args.common.root().join(name);
    let out = experiment::run(&cfg, &dir)?;
    println!("run directory: {}", dir.display());
    if let Some(r) = &out.final_record {
        println!(
            "final step {}: pass@1 {:.4}, token entropy {:.4}",
            r.step, r.pass_at_1, r.token_entropy.mean
        );
    }
    match &out.manifest.status {
        RunStatus::Aborted { reason } => {
            eprintln!("aborted: {reason}");
            Ok(ExitCode::FAILURE)
        }
        _ => Ok(ExitCode::SUCCESS),
    }
}

fn sweep(args: SweepArgs) -> Result<ExitCode> {
    let cfg = args.common.load()?;
    let spec = match (args.axis, cfg.sweep.clone()) {
        (Some(axis), file) => SweepConfig {
            axis,
            values: if args.values.is_empty() {
                file.map(|f| f.values).unwrap_or_default()
            } else {
                args.values.clone()
            },
            seeds: args.seeds.clone(),
        },
        (None, Some(mut file)) => {
            if !args.values.is_empty() {
                file.values = args.values.clone();
            }
            if !args.seeds.is_empty() {
                file.seeds = args.seeds.clone();
            }
            file
        }
        (None, None) => bail!("no sweep axis: pass --axis or add a [sweep] section"),
    };
    let root = args.common.root().join(format!("{}-sweep-{}", args.common.stem(), spec.axis));
    let outcome = experiment::sweep(&cfg, &spec, &root)?;
    println!("sweep directory: {}", root.display());
    print!("{}", std::fs::read_to_string(root.join("summary.csv"))?);
    let failed: Vec<_> = outcome.children.iter().filter(|c| c.error.is_some()).collect();
    for c in &failed {
        eprintln!("child {}={} seed {} failed: {}", spec.axis, c.value, c.seed, c.error.as_deref().unwrap_or(""));
    }
    Ok(if failed.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn replay(manifest: &Path, out: Option<PathBuf>) -> Result<ExitCode> {
    let dir = out.unwrap_or_else(|| manifest.parent().unwrap_or(Path::new(".")).join("replay"));
    let report = experiment::replay(manifest, &dir)?;
    if report.identical {
        println!("identical: {} records reproduced byte for byte", report.original_lines);
        Ok(ExitCode::SUCCESS)
    } else {
        println!(
            "MISMATCH: original {} records, replay {}, first difference at line {:?}",
            report.original_lines, report.replay_lines, report.first_difference
        );
        Ok(ExitCode::FAILURE)
    }
}

fn load_task(path: &Path) -> Result<TaskConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(cfg) = ExperimentConfig::from_toml(&text) {
        return Ok(cfg.task);
    }
    let table: toml::Table = text.parse()?;
    let task = table.get("task").cloned().unwrap_or(toml::Value::Table(table));
    Ok(task.try_into()?)
}

fn enumerate(path: &Path) -> Result<ExitCode> {
    let task = load_task(path)?.build()?;
    for p in task.prompts() {
        let set = task.enumerate_success_set(&p.tokens)?;
        println!("{} : {} correct responses", task.vocab().render(&p.tokens), set.cardinality());
        for m in &set.members {
            println!("  {}", task.vocab().render(m));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn check_gradients(instances: usize, seed: u64, step: f64, tolerance: f64) -> Result<ExitCode> {
    let clip = ClipConfig::default();
    let mut ok = true;
    for norm in [Normalization::TokenGlobal, Normalization::PerSequence] {
        let r = surrogate_gradient_check(instances, seed, step, &clip, norm)?;
        let pass = r.max_abs_error < tolerance;
        ok &= pass;
        println!(
            "{:?}: {} instances, max abs error {:.3e} ({}), {} of {} tokens clipped, {} rejected near a clip boundary",
            norm,
            r.instances,
            r.max_abs_error,
            if pass { "ok" } else { "FAIL" },
            r.clipped_tokens,
            r.total_tokens,
            r.rejected_near_kink
        );
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::Replay { manifest, out } => replay(&manifest, out),
        Command::Enumerate { config } => enumerate(&config),
        Command::CheckGradients {
            instances,
            seed,
            step,
            tolerance,
        } => check_gradients(instances, seed, step, tolerance),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
