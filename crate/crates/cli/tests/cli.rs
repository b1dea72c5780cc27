use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_measure-mirror"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, seed: u64, problem: &str, n: usize, m: usize) {
    let out = run(&[
        "--seed", &seed.to_string(), "--out-dir", path(dir), "gen", "--problem", problem, "--n", &n.to_string(),
        "--m", &m.to_string(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn generated_instance_matches_golden_hash() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), 42, "eot", 10, 10);
    let mut hasher = Sha256::new();
    for f in ["cost.json", "mu.json", "nu.json"] {
        hasher.update(fs::read(dir.path().join(f)).unwrap());
    }
    let digest: String = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
    let golden = include_str!("golden/gen_eot_seed42_10x10.sha256");
    assert_eq!(digest, golden.split_whitespace().next().unwrap());
}

#[test]
fn same_seed_gives_identical_files_and_traces() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        gen(d.path(), 7, "latent", 5, 8);
        let out = run(&[
            "--out-dir", path(d.path()), "latent-em", "--kernel", path(&d.path().join("kernel.json")), "--obs",
            path(&d.path().join("obs.json")), "--init", path(&d.path().join("init.json")), "--iters", "30",
        ]);
        assert!(out.status.success());
    }
    for f in ["kernel.json", "obs.json", "init.json", "trace.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn generated_json_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), 3, "mmd", 6, 6);
    let text = fs::read_to_string(dir.path().join("gram.json")).unwrap();
    let gram: measure_mirror::Matrix = serde_json::from_str(&text).unwrap();
    assert_eq!(serde_json::to_string_pretty(&gram).unwrap() + "\n", text);
}

#[test]
fn missing_file_exits_1_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no_such_cost.json");
    let out = run(&["--out-dir", path(dir.path()), "sinkhorn", "--cost", path(&missing), "--mu", "a", "--nu", "b", "--epsilon", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_cost.json"));
}

#[test]
fn bad_flags_exit_1() {
    assert_eq!(run(&["sinkhorn", "--epsilon", "x"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn invalid_problem_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), 1, "eot", 3, 3);
    let d = dir.path();
    let out = run(&[
        "--out-dir", path(d), "sinkhorn", "--cost", path(&d.join("cost.json")), "--mu", path(&d.join("mu.json")),
        "--nu", path(&d.join("nu.json")), "--epsilon=-1",
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn zero_cost_certificate_is_all_true() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("cost.csv"), "0,0,0\n0,0,0\n").unwrap();
    fs::write(d.join("mu.json"), "[0.25, 0.75]").unwrap();
    fs::write(d.join("nu.csv"), "0.2\n0.3\n0.5\n").unwrap();
    let out = run(&[
        "--out-dir", path(d), "sinkhorn", "--cost", path(&d.join("cost.csv")), "--mu", path(&d.join("mu.json")),
        "--nu", path(&d.join("nu.csv")), "--epsilon", "1", "--iters", "5", "--certify",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cert = json(&d.join("certificate.json"));
    for key in ["sublinear_ok", "linear_ok", "strong_convexity_ok", "potential_stability_ok"] {
        assert_eq!(cert[key], true, "{key}");
    }
    for key in ["sublinear_ok", "linear_ok", "displayed_ok"] {
        assert_eq!(cert["rate"][key], true, "{key}");
    }
    let manifest = json(&d.join("manifest.json"));
    assert_eq!(manifest["prng"], measure_mirror::instance::PRNG_NAME);
    assert_eq!(manifest["exit_code"], 0);
    assert!(manifest["wall_time_secs"].as_f64().unwrap() >= 0.0);
}

#[test]
fn certified_runs_pass_on_random_instances() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen(d, 11, "latent", 6, 9);
    let out = run(&[
        "--out-dir", path(d), "latent-em", "--kernel", path(&d.join("kernel.json")), "--obs", path(&d.join("obs.json")),
        "--init", path(&d.join("init.json")), "--iters", "200", "--certify",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&d.join("certificate.json"))["rate_ok"], true);

    let m = d.join("mmd");
    gen(&m, 12, "mmd", 8, 8);
    let out = run(&[
        "--out-dir", path(&m), "mmd-md", "--gram", path(&m.join("gram.json")), "--target", path(&m.join("target.json")),
        "--init", path(&m.join("init.json")), "--certify",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = fs::read_to_string(m.join("trace.csv")).unwrap();
    assert!(trace.starts_with("n,objective,bregman_to_ref,rate_bound,constraint_residual\n"));
    assert_eq!(trace.lines().count(), 102);
}

#[test]
fn config_file_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("run.json"), r#"{"kind": "gen", "problem": "eot", "n": 4, "m": 2, "seed": 9}"#).unwrap();
    let out = run(&["--seed", "1", "--out-dir", path(d), "--config", path(&d.join("run.json"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = json(&d.join("manifest.json"));
    assert_eq!(manifest["config"]["seed"], 9);
    let cost = json(&d.join("cost.json"));
    assert_eq!((cost.as_array().unwrap().len(), cost[0].as_array().unwrap().len()), (4, 2));
}

#[test]
fn verify_runs_the_selected_criteria() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["--out-dir", path(dir.path()), "verify", "--only", "2,3,12"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let report = json(&dir.path().join("verify_report.json"));
    assert_eq!(report["passed"], true);
    assert_eq!(report["criteria"].as_array().unwrap().len(), 3);
}

#[test]
fn size_one_problems_converge_at_once() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen(d, 5, "eot", 1, 1);
    let out = run(&[
        "--out-dir", path(d), "sinkhorn", "--cost", path(&d.join("cost.json")), "--mu", path(&d.join("mu.json")),
        "--nu", path(&d.join("nu.json")), "--epsilon", "1", "--iters", "1", "--certify",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cert = json(&d.join("certificate.json"));
    assert_eq!(cert["rate"]["kl_to_optimum"][1], 0.0);
}

#[test]
fn default_verify_battery_exits_0() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["--out-dir", path(dir.path()), "verify"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert_eq!(json(&dir.path().join("verify_report.json"))["criteria"].as_array().unwrap().len(), 12);
}
