use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use progrpo::advantage::ArmMode;
use progrpo::experiment::{self, ExperimentConfig, RunManifest, SweepAxis, SweepConfig};
use progrpo::trainer::Algorithm;
use proptest::prelude::*;
use serde_json::Value;

const TINY: &str = r#"
[task]
kind = "sum_to_target"
max_response_len = 2
targets = [3, 4, 5]

[train]
algorithm = "progrpo"
prompts_per_batch = 3
total_steps = 4

[arm]
mode = "prompt_minus_answer"
alpha = 0.3

[metrics]
eval_samples = 8
pass_k = [1, 4]
manifold_interval = 2
"#;

fn tiny() -> ExperimentConfig {
    ExperimentConfig::from_toml(TINY).unwrap()
}

/// Leaf paths whose values differ between two JSON documents.
fn diff_paths(a: &Value, b: &Value, prefix: &str, out: &mut BTreeSet<String>) {
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            for k in x.keys().chain(y.keys()) {
                let null = Value::Null;
                let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                diff_paths(x.get(k).unwrap_or(&null), y.get(k).unwrap_or(&null), &p, out);
            }
        }
        _ if a != b => {
            out.insert(prefix.to_string());
        }
        _ => {}
    }
}

fn manifest_config(dir: &Path) -> Value {
    let m = RunManifest::load(&dir.join("manifest.json")).unwrap();
    serde_json::to_value(&m.config).unwrap()
}

#[test]
fn sweep_children_differ_only_in_the_swept_axis() {
    let root = tempfile::tempdir().unwrap();
    let spec = SweepConfig {
        axis: SweepAxis::Alpha,
        values: vec!["0".into(), "0.7".into()],
        seeds: vec![3, 4],
    };
    let out = experiment::sweep(&tiny(), &spec, root.path()).unwrap();
    assert_eq!(out.children.len(), 4);
    assert!(out.children.iter().all(|c| c.error.is_none()));
    assert_eq!(out.rows.len(), 2);
    assert!(out.rows.iter().all(|r| r.runs == 2 && r.pass_at.contains_key(&4)));

    let by = |v: &str, s: u64| {
        let c = out.children.iter().find(|c| c.value == v && c.seed == s).unwrap();
        manifest_config(&c.dir)
    };
    let mut d = BTreeSet::new();
    diff_paths(&by("0", 3), &by("0.7", 3), "", &mut d);
    assert_eq!(d, BTreeSet::from(["arm.alpha".to_string()]));
    let mut d = BTreeSet::new();
    diff_paths(&by("0.7", 3), &by("0.7", 4), "", &mut d);
    assert_eq!(d, BTreeSet::from(["train.master_seed".to_string()]));

    let csv = fs::read_to_string(root.path().join("summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("alpha,runs,failures,pass_at_1_median"));
    assert!(root.path().join("summary.json").exists());
}

#[test]
fn arm_mode_sweep_has_one_row_per_mode() {
    let root = tempfile::tempdir().unwrap();
    let modes: Vec<String> = ArmMode::ALL[1..].iter().map(|m| m.as_str().to_string()).collect();
    let spec = SweepConfig {
        axis: SweepAxis::ArmMode,
        values: modes.clone(),
        seeds: vec![],
    };
    let out = experiment::sweep(&tiny(), &spec, root.path()).unwrap();
    let rows: Vec<&str> = out.rows.iter().map(|r| r.value.as_str()).collect();
    assert_eq!(rows, modes.iter().map(String::as_str).collect::<Vec<_>>());
    for c in &out.children {
        let m = RunManifest::load(&c.dir.join("manifest.json")).unwrap();
        assert_eq!(m.config.arm.mode.as_str(), c.value);
    }
}

#[test]
fn every_record_carries_the_full_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = experiment::run(&tiny(), dir.path()).unwrap();
    assert!(out.completed());
    let text = fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    let fields = [
        "step",
        "mean_reward",
        "pass_at_1",
        "pass_at",
        "token_entropy",
        "distinct_2",
        "self_bleu",
        "manifold_entropy_mean",
        "manifold_kl_mean",
        "manifold",
        "loss",
        "grad_norm",
    ];
    let mut steps = Vec::new();
    for line in text.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        for f in fields {
            assert!(v.get(f).is_some(), "missing {f} in {line}");
        }
        assert!(v["pass_at"].get("4").is_some());
        steps.push(v["step"].as_u64().unwrap());
    }
    assert_eq!(steps, vec![0, 1, 2, 3]);
}

#[test]
fn grpo_and_zero_alpha_streams_match() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut grpo = tiny();
    grpo.train.algorithm = Algorithm::Grpo;
    let mut pro = tiny();
    pro.arm.alpha = 0.0;
    experiment::run(&grpo, a.path()).unwrap();
    experiment::run(&pro, b.path()).unwrap();
    let read = |d: &Path| fs::read(d.join("metrics.jsonl")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn replay_of_a_sweep_child_is_exact() {
    let root = tempfile::tempdir().unwrap();
    let spec = SweepConfig {
        axis: SweepAxis::Seed,
        values: vec!["11".into()],
        seeds: vec![],
    };
    let out = experiment::sweep(&tiny(), &spec, root.path()).unwrap();
    let dir = &out.children[0].dir;
    let report = experiment::replay(&dir.join("manifest.json"), &root.path().join("again")).unwrap();
    assert!(report.identical, "{report:?}");
    assert_eq!(report.original_lines, 4);
}

#[test]
fn seeds_beyond_the_file_integer_range_are_rejected() {
    let mut cfg = tiny();
    cfg.train.master_seed = u64::MAX;
    assert!(cfg.validate().unwrap_err().to_string().contains("train.master_seed"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_round_trip_is_identity(
        alpha in 0.0f64..3.0,
        lr in 0.0f64..1.0,
        seed in 0..=i64::MAX as u64,
        steps in 1u64..10_000,
        g in 2usize..32,
        mode in 0usize..5,
        algo in 0usize..3,
    ) {
        let mut cfg = tiny();
        cfg.arm.alpha = alpha;
        cfg.arm.mode = ArmMode::ALL[mode];
        cfg.train.learning_rate = lr;
        cfg.train.master_seed = seed;
        cfg.train.total_steps = steps;
        cfg.train.group_size = g;
        cfg.train.algorithm = [Algorithm::Grpo, Algorithm::Progrpo, Algorithm::Reinforce][algo];
        let text = cfg.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_toml().unwrap(), text);
    }
}
