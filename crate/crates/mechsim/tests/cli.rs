use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mechsim::{rerun_cell, settlement_json, Manifest};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mechsim"));
    c.env_remove("MECHSIM_OUT");
    c
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn text(out: &[u8]) -> String {
    String::from_utf8_lossy(out).into_owned()
}

const MALICE: &str = r#"{
  "experiment": "malice-sweep",
  "scenario": { "kind": "synthetic", "agents": 3, "seed": 5 },
  "k_f": 80,
  "sweep": { "values": [0, -0.1, -1], "agent": 1 },
  "seed": 42
}"#;

fn run(config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin().arg("run").arg(config).arg("--out").arg(out).args(extra).output().unwrap()
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut all = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                all.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    all.sort();
    all
}

#[test]
fn list_experiments_names_all_five() {
    let out = bin().arg("list-experiments").output().unwrap();
    assert!(out.status.success());
    let s = text(&out.stdout);
    for name in ["tisi-sweep", "tisd-range-sweep", "malice-sweep", "equilibrium", "filter-demo"] {
        assert!(s.contains(name), "{name} missing from\n{s}");
    }
}

#[test]
fn validate_fills_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "min.json",
        r#"{"experiment": "filter-demo", "scenario": {"kind": "ev-desk", "horizon": 4}}"#,
    );
    let out = bin().arg("validate").arg(&cfg).output().unwrap();
    assert!(out.status.success(), "{}", text(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["k_f"], 300);
    assert_eq!(v["k_s_window"], 4);
    assert_eq!(v["p_bar"], 1e6);
    assert_eq!(v["step_rule"]["a"], 1.0);
    assert_eq!(v["step_rule"]["b"], 10.0);
    assert_eq!(v["mechanism"], "devcg-g");
    assert_eq!(v["demo"]["agent"], 0);
}

#[test]
fn unknown_key_is_a_config_error_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.json",
        "{\n  \"experiment\": \"filter-demo\",\n  \"scenario\": {\"kind\": \"ev-desk\", \"horizon\": 4},\n  \"k_ff\": 3\n}",
    );
    let out = bin().arg("validate").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = text(&out.stderr);
    assert!(err.contains("k_ff") && err.contains("line 4"), "{err}");
}

#[test]
fn semantic_errors_are_listed_with_paths() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.json",
        r#"{
  "experiment": "tisi-sweep",
  "scenario": {"kind": "ev", "params": {"beta": -0.1, "alpha": [1, 2], "soc0": [0.1, 0.2], "demand": [1, 2]}},
  "k_f": 10,
  "k_s_window": 10,
  "sweep": {"values": [0.5, 2]}
}"#,
    );
    let out = bin().arg("validate").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = text(&out.stderr);
    assert!(err.contains("k_s_window"), "{err}");
    assert!(err.contains("scenario.params.beta"), "{err}");
    assert!(err.contains("sweep.values"), "{err}");
    assert!(err.lines().count() >= 3, "{err}");
}

#[test]
fn malformed_json_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.json", "{\"experiment\": ");
    let out = run(&cfg, &dir.path().join("o"), &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulation_error_exits_1() {
    // On a path graph, the middle agent quitting splits the others.
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "eq.json",
        r#"{
  "experiment": "equilibrium",
  "scenario": { "kind": "synthetic", "agents": 3 },
  "graph": { "kind": "path" },
  "k_f": 20
}"#,
    );
    let out = run(&cfg, &dir.path().join("o"), &[]);
    assert_eq!(out.status.code(), Some(1), "{}", text(&out.stderr));
    assert!(text(&out.stderr).contains("disconnected"));
}

#[test]
fn reruns_are_byte_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "m.json", MALICE);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run(&cfg, &a, &["--jobs", "1"]).status.success());
    assert!(run(&cfg, &b, &["--jobs", "3"]).status.success());
    let fa = files(&a);
    assert_eq!(fa, files(&b));
    for f in &fa {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{}", f.display());
    }
    assert!(fa.contains(&PathBuf::from("cells/cell-00002/settlement.json")));
}

#[test]
fn csv_outputs_use_lf_and_headers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "m.json", MALICE);
    let out = dir.path().join("o");
    assert!(run(&cfg, &out, &[]).status.success());
    let body = fs::read_to_string(out.join("results.csv")).unwrap();
    assert!(!body.contains('\r'));
    let mut lines = body.lines();
    assert_eq!(lines.next(), Some("cell,gamma,agent,payoff,payment,penalty"));
    assert_eq!(lines.count(), 9);
    assert!(body.contains("\n2,-1.0,1,"));
}

#[test]
fn settlement_json_has_the_report_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "m.json", MALICE);
    let out = dir.path().join("o");
    assert!(run(&cfg, &out, &[]).status.success());
    let v: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("cells/cell-00000/settlement.json")).unwrap()).unwrap();
    let keys: Vec<&str> = v.as_object().unwrap().keys().map(|k| k.as_str()).collect();
    for k in ["participants", "o_star", "o_seq", "payments", "penalties", "e_terms", "payoffs", "quit"] {
        assert!(keys.contains(&k), "{k} missing");
    }
}

#[test]
fn env_var_overrides_out_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "m.json", MALICE);
    let flag = dir.path().join("flag");
    let env = dir.path().join("env");
    let out = bin().arg("run").arg(&cfg).arg("--out").arg(&flag).env("MECHSIM_OUT", &env).output().unwrap();
    assert!(out.status.success());
    assert!(env.join("results.csv").exists());
    assert!(!flag.exists());
}

#[test]
fn seed_flag_is_recorded_in_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "m.json", MALICE);
    let out = dir.path().join("o");
    assert!(run(&cfg, &out, &["--seed", "1000"]).status.success());
    let m = Manifest::load(&out.join("manifest.json")).unwrap();
    assert_eq!(m.config.seed, 1000);
    assert_eq!(m.cells.iter().map(|c| c.seed).collect::<Vec<_>>(), vec![1000, 1001, 1002]);
    assert!(m.cells.iter().all(|c| (76..80).contains(&c.k_s)));
}

#[test]
fn manifest_alone_reproduces_a_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "t.json",
        r#"{
  "experiment": "tisd-range-sweep",
  "scenario": { "kind": "ev-desk", "horizon": 4 },
  "k_f": 60,
  "sweep": { "values": [0, 2], "repeats": 2 },
  "seed": 9
}"#,
    );
    let out = dir.path().join("o");
    assert!(run(&cfg, &out, &[]).status.success());
    // Only the manifest is consulted; the original config is gone.
    fs::remove_file(&cfg).unwrap();
    let m = Manifest::load(&out.join("manifest.json")).unwrap();
    let cell = rerun_cell(&m, 3).unwrap();
    let written = fs::read_to_string(out.join("cells/cell-00003/settlement.json")).unwrap();
    assert_eq!(settlement_json(&cell).unwrap(), written);
}

#[test]
fn filter_demo_writes_traces_and_repairs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "f.json",
        r#"{
  "experiment": "filter-demo",
  "scenario": { "kind": "synthetic", "agents": 2, "dim": 2 },
  "k_f": 30,
  "k_s": 27,
  "demo": { "agent": 1, "shift": -0.5 }
}"#,
    );
    let out = dir.path().join("o");
    assert!(run(&cfg, &out, &[]).status.success());
    let traces = fs::read_to_string(out.join("traces.csv")).unwrap();
    assert!(traces.starts_with("sequence,step,agent,coordinate,state,gradient\n"));
    // social (2 agents) and two leave-one-out runs (1 agent each), 31 steps, 2 coordinates
    assert_eq!(traces.lines().count(), 1 + 31 * 2 * (2 + 1 + 1));
    let repairs = fs::read_to_string(out.join("repairs.csv")).unwrap();
    assert!(repairs.starts_with("agent,t,sequence,step,repair,passed\n"));
    // each agent interleaves 2 sequences over steps 27..=30
    assert_eq!(repairs.lines().count(), 1 + 2 * 2 * 4);
}
