use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_resid-rl");

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env_remove("RESID_RL_SEED")
        .output()
        .expect("spawn resid-rl")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = run_in(dir, args);
    assert_eq!(
        code(&o),
        0,
        "{args:?}\nstdout: {}\nstderr: {}",
        stdout(&o),
        String::from_utf8_lossy(&o.stderr)
    );
    stdout(&o)
}

const SMALL_THEORY: &str = r#"
[theory]
contraction_pairs = 10
kernel_samples = 100
lipschitz_draws = 2
bound_samples = 50
injection_samples = 500
injection_grid_nodes = 51

[theory.consistency]
n_values = [50, 2000]
seeds = [0, 1, 2]
grid_nodes = 101
"#;

#[test]
fn gen_data_line_count_and_meta() {
    let d = tempfile::tempdir().unwrap();
    let out = ok(
        d.path(),
        &[
            "gen-data",
            "--env",
            "synthetic1d",
            "--trajectories",
            "10",
            "--horizon",
            "50",
            "--seed",
            "7",
        ],
    );
    assert!(out.contains("N=500") && out.contains("config_hash="), "{out}");
    let body = fs::read_to_string(d.path().join("data.jsonl")).unwrap();
    assert_eq!(body.lines().count(), 500);
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.path().join("data.jsonl.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["num_samples"], 500);
    assert_eq!(meta["seed"], 7);
    assert!(meta["config_hash"].is_string());
}

#[test]
fn cartpole_sample_count_is_sum_of_episode_lengths() {
    let d = tempfile::tempdir().unwrap();
    ok(
        d.path(),
        &[
            "gen-data",
            "--env",
            "cartpole",
            "--trajectories",
            "40",
            "--horizon",
            "500",
            "--seed",
            "2",
        ],
    );
    let lines = fs::read_to_string(d.path().join("data.jsonl")).unwrap().lines().count();
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.path().join("data.jsonl.meta.json")).unwrap()).unwrap();
    let total: u64 = meta["episode_lengths"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .sum();
    assert_eq!(total as usize, lines);
    assert_eq!(meta["num_samples"].as_u64().unwrap() as usize, lines);
    // Random play ends well before the step cap.
    assert!(lines < 40 * 500);
}

#[test]
fn flags_override_config_file() {
    let d = tempfile::tempdir().unwrap();
    fs::write(
        d.path().join("run.toml"),
        "seed = 5\n[data]\ntrajectories = 3\nhorizon = 5\n",
    )
    .unwrap();
    ok(d.path(), &["gen-data", "--config", "run.toml", "--out", "a.jsonl"]);
    assert_eq!(
        fs::read_to_string(d.path().join("a.jsonl")).unwrap().lines().count(),
        15
    );
    ok(
        d.path(),
        &[
            "gen-data",
            "--config",
            "run.toml",
            "--trajectories",
            "4",
            "--out",
            "b.jsonl",
        ],
    );
    assert_eq!(
        fs::read_to_string(d.path().join("b.jsonl")).unwrap().lines().count(),
        20
    );
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.path().join("b.jsonl.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 5);
}

#[test]
fn seed_precedence() {
    let d = tempfile::tempdir().unwrap();
    let gen = |seed_env: Option<&str>, extra: &[&str], out: &str| {
        let mut c = Command::new(BIN);
        c.current_dir(d.path())
            .args(["gen-data", "--trajectories", "2", "--horizon", "3", "--out", out])
            .args(extra)
            .env_remove("RESID_RL_SEED");
        if let Some(s) = seed_env {
            c.env("RESID_RL_SEED", s);
        }
        let o = c.output().unwrap();
        assert_eq!(o.status.code(), Some(0));
        let meta: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(d.path().join(format!("{out}.meta.json"))).unwrap()).unwrap();
        meta["seed"].as_u64().unwrap()
    };
    assert_eq!(gen(None, &[], "a.jsonl"), 0);
    assert_eq!(gen(Some("11"), &[], "b.jsonl"), 11);
    assert_eq!(gen(Some("11"), &["--seed", "3"], "c.jsonl"), 3);
    let o = Command::new(BIN)
        .current_dir(d.path())
        .args(["gen-data", "--trajectories", "1", "--horizon", "1"])
        .env("RESID_RL_SEED", "abc")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_two() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("typo.toml"), "[data]\ntrajectoris = 3\n").unwrap();
    fs::write(d.path().join("badlr.toml"), "[dqn]\nlr = -1.0\n").unwrap();
    ok(d.path(), &["gen-data", "--trajectories", "2", "--horizon", "3"]);
    let cases: &[&[&str]] = &[
        &["train", "--config", "missing.toml"],
        &["gen-data", "--env", "pendulum"],
        &["gen-data", "--config", "typo.toml"],
        &["gen-data", "--trajectories", "0"],
        &["train", "--data", "data.jsonl", "--config", "badlr.toml"],
        &["train", "--data", "nope.jsonl"],
        &["train"],
        &["fit-model", "--data", "data.jsonl", "--regression", "quadratic"],
        &["solve", "--operator", "sideways"],
        &["solve", "--env", "cartpole", "--operator", "true"],
        &["evaluate"],
        &["verify", "--suite", "nope"],
        &["verify", "--env", "cartpole"],
        &["--jobs", "0", "gen-data"],
        &["no-such-command"],
    ];
    for args in cases {
        let o = run_in(d.path(), args);
        assert_eq!(code(&o), 2, "{args:?}: stderr {}", String::from_utf8_lossy(&o.stderr));
        assert!(!o.stderr.is_empty());
    }
}

#[test]
fn runtime_failures_exit_one() {
    let d = tempfile::tempdir().unwrap();
    // Value iteration cannot reach 1e-10 in two sweeps.
    let o = run_in(
        d.path(),
        &["solve", "--operator", "true", "--grid", "21", "--max-iter", "2"],
    );
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    // A threshold no finite sample meets turns one check into a failure.
    let cfg = SMALL_THEORY.replace("[theory]\n", "[theory]\nfinal_error_fraction = 1e-12\n");
    fs::write(d.path().join("strict.toml"), cfg).unwrap();
    let o = run_in(d.path(), &["verify", "--config", "strict.toml"]);
    assert_eq!(code(&o), 1, "{}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("FAIL consistency/final-error"));
}

#[test]
fn verify_theory_reports_all_checks_passed() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("small.toml"), SMALL_THEORY).unwrap();
    let out = ok(
        d.path(),
        &[
            "verify",
            "--suite",
            "theory",
            "--env",
            "synthetic1d",
            "--config",
            "small.toml",
        ],
    );
    assert!(out.contains("all checks passed"), "{out}");
    assert_eq!(out.lines().filter(|l| l.starts_with("PASS ")).count(), 12);
}

#[test]
fn train_then_evaluate_reproduces_final_eval() {
    let d = tempfile::tempdir().unwrap();
    ok(
        d.path(),
        &[
            "gen-data",
            "--env",
            "cartpole",
            "--trajectories",
            "30",
            "--horizon",
            "500",
            "--seed",
            "1",
        ],
    );
    let train = ok(
        d.path(),
        &[
            "train",
            "--data",
            "data.jsonl",
            "--episodes",
            "8",
            "--eval-every",
            "4",
            "--eval-episodes",
            "2",
            "--final-eval-episodes",
            "6",
            "--regression-epochs",
            "3",
            "--seed",
            "4",
            "--out",
            "run",
        ],
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.path().join("run/report.json")).unwrap()).unwrap();
    assert_eq!(report["episodes"].as_array().unwrap().len(), 8);
    assert_eq!(report["config"]["seed"], 4);
    let csv = fs::read_to_string(d.path().join("run/report.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "episode,train_return,eval_return_mean,eval_return_std,loss_mean,epsilon"
    );
    assert_eq!(csv.lines().count(), 9);
    for f in ["report.csv", "report.json", "qnet.json"] {
        let side: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(d.path().join(format!("run/{f}.meta.json"))).unwrap()).unwrap();
        assert_eq!(side["seeds"], serde_json::json!([4]));
        assert!(train.contains(side["config_hash"].as_str().unwrap()));
    }
    ok(
        d.path(),
        &["evaluate", "--model", "run/qnet.json", "--episodes", "6", "--seed", "4"],
    );
    let eval: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.path().join("eval.json")).unwrap()).unwrap();
    assert_eq!(eval["summary"], report["final_eval"]);
}

#[test]
fn fit_model_then_solve_with_it_matches_inline_fit() {
    let d = tempfile::tempdir().unwrap();
    ok(
        d.path(),
        &["gen-data", "--trajectories", "10", "--horizon", "20", "--seed", "3"],
    );
    ok(
        d.path(),
        &[
            "fit-model",
            "--data",
            "data.jsonl",
            "--regression",
            "linear",
            "--seed",
            "3",
        ],
    );
    ok(
        d.path(),
        &[
            "solve",
            "--data",
            "data.jsonl",
            "--model",
            "model.json",
            "--grid",
            "51",
            "--out",
            "a.csv",
            "--seed",
            "3",
        ],
    );
    ok(
        d.path(),
        &[
            "solve",
            "--data",
            "data.jsonl",
            "--regression",
            "linear",
            "--grid",
            "51",
            "--out",
            "b.csv",
            "--seed",
            "3",
        ],
    );
    let a = fs::read(d.path().join("a.csv")).unwrap();
    assert_eq!(a, fs::read(d.path().join("b.csv")).unwrap());
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().next().unwrap(), "s0,q0,q1,q2,v");
    assert_eq!(text.lines().count(), 52);
}

#[test]
fn sweep_outputs_do_not_depend_on_worker_count() {
    let d = tempfile::tempdir().unwrap();
    let args = |jobs: &'static str, out: &'static str| -> Vec<&'static str> {
        vec![
            "--jobs",
            jobs,
            "sweep",
            "--n",
            "4,8",
            "--seeds",
            "0,1",
            "--episodes",
            "4",
            "--eval-every",
            "0",
            "--final-eval-episodes",
            "2",
            "--regression-epochs",
            "2",
            "--data-horizon",
            "100",
            "--out",
            out,
        ]
    };
    ok(d.path(), &args("1", "one"));
    ok(d.path(), &args("3", "three"));
    for f in ["summary.csv", "cells.csv", "curves.csv", "manifest.json"] {
        assert_eq!(
            fs::read(d.path().join("one").join(f)).unwrap(),
            fs::read(d.path().join("three").join(f)).unwrap(),
            "{f}"
        );
    }
}
