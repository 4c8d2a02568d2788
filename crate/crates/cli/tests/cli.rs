use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use progrpo::experiment::RunManifest;
use progrpo::trainer::Algorithm;

const CONFIG: &str = r#"
[task]
kind = "sum_to_target"
max_response_len = 2
targets = [3, 4]

[train]
algorithm = "progrpo"
prompts_per_batch = 2
total_steps = 5

[arm]
mode = "prompt_minus_answer"
alpha = 0.3

[metrics]
eval_samples = 8
manifold_interval = 2
"#;

fn progrpo(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_progrpo"))
        .args(args)
        .env("PROGRPO_OUT", out)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_applies_overrides_and_records_them() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "exp.toml", CONFIG);
    let o = progrpo(
        &["run", &cfg, "--algo", "grpo", "--seed", "9", "--steps", "3", "--name", "r"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let m = RunManifest::load(&tmp.path().join("r/manifest.json")).unwrap();
    assert_eq!(m.config.train.algorithm, Algorithm::Grpo);
    assert_eq!((m.master_seed, m.steps_completed), (9, 3));
    assert_eq!(fs::read_to_string(tmp.path().join("r/metrics.jsonl")).unwrap().lines().count(), 3);
}

#[test]
fn grpo_and_zero_alpha_runs_emit_identical_streams() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "exp.toml", CONFIG);
    let a = progrpo(&["run", &cfg, "--algo", "grpo", "--seed", "7", "--name", "a"], tmp.path());
    let b = progrpo(
        &["run", &cfg, "--algo", "progrpo", "--alpha", "0", "--seed", "7", "--name", "b"],
        tmp.path(),
    );
    assert!(a.status.success() && b.status.success());
    let read = |n: &str| fs::read(tmp.path().join(n).join("metrics.jsonl")).unwrap();
    assert_eq!(read("a"), read("b"));
}

#[test]
fn replay_reports_identical_stream() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "exp.toml", CONFIG);
    assert!(progrpo(&["run", &cfg, "--name", "r"], tmp.path()).status.success());
    let manifest = tmp.path().join("r/manifest.json");
    let o = progrpo(&["replay", manifest.to_str().unwrap()], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("identical"));
    assert!(tmp.path().join("r/replay/metrics.jsonl").exists());
}

#[test]
fn missing_task_section_exits_with_field_diagnostic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", "[train]\ngroup_size = 4\n");
    let o = progrpo(&["run", &cfg], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("task"), "{}", stderr(&o));

    let cfg = write_config(tmp.path(), "bad2.toml", &format!("{CONFIG}\n[sweep]\naxis = \"alpha\"\nvalues = []\n"));
    let o = progrpo(&["run", &cfg], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sweep.values"), "{}", stderr(&o));
}

#[test]
fn sweep_writes_one_directory_per_value_and_a_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "exp.toml", CONFIG);
    let o = progrpo(
        &["sweep", &cfg, "--axis", "alpha", "--values", "0,1.0", "--seeds", "1,2", "--steps", "2"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let root = tmp.path().join("exp-sweep-alpha");
    for v in ["alpha-0", "alpha-1.0"] {
        for s in ["seed-1", "seed-2"] {
            assert!(root.join(v).join(s).join("manifest.json").exists(), "{v}/{s}");
        }
    }
    let summary = fs::read_to_string(root.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
}

#[test]
fn enumerate_prints_every_success_set() {
    let tmp = tempfile::tempdir().unwrap();
    let bare = write_config(
        tmp.path(),
        "task.toml",
        "kind = \"sum_to_target\"\nmax_response_len = 2\ntargets = [3]\n",
    );
    let o = progrpo(&["enumerate", &bare], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    // 3 = 0+3 = 1+2 = 2+1 = 3+0, plus the single digit 3
    assert!(text.contains(": 5 correct responses"), "{text}");
    assert_eq!(text.lines().count(), 6);

    let full = write_config(tmp.path(), "exp.toml", CONFIG);
    let o = progrpo(&["enumerate", &full], tmp.path());
    assert!(o.status.success());
    assert_eq!(String::from_utf8_lossy(&o.stdout).matches("correct responses").count(), 2);
}

#[test]
fn check_gradients_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = progrpo(&["check-gradients", "--instances", "20", "--seed", "3"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(text.matches("(ok)").count(), 2, "{text}");
}

#[test]
fn unknown_flag_values_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "exp.toml", CONFIG);
    let o = progrpo(&["run", &cfg, "--algo", "ppo"], tmp.path());
    assert!(!o.status.success());
    let o = progrpo(&["sweep", &cfg, "--axis", "temperature", "--values", "1"], tmp.path());
    assert!(!o.status.success());
}
