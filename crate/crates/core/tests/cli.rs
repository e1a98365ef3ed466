use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn vodswarm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vodswarm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout_json(o: &Output) -> Value {
    assert_eq!(code(o), 0, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).expect("json on stdout")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &TempDir, name: &str, text: &str) -> String {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const HEADER: &str = "client_id,arrival_time,start_pos,end_pos,interaction\n";

#[test]
fn generated_li_workload_analyzes_as_li() {
    let dir = TempDir::new().unwrap();
    let trace = dir.path().join("li.csv");
    let gen = vodswarm(&[
        "generate", "--profile", "li", "--sessions", "100", "--seed", "7", "--object-len", "300", "--out",
        path_str(&trace),
    ]);
    let summary = stdout_json(&gen);
    assert!(summary["d"].as_f64().unwrap() > 0.0);

    let an = stdout_json(&vodswarm(&["analyze", path_str(&trace)]));
    assert_eq!(an["sessions"], 100);
    assert!(an["profile_counts"]["li"].as_u64().unwrap() >= 95);
    assert!(an["top_positions"].as_array().unwrap().len() <= 10);
}

#[test]
fn generate_rejects_zero_sessions() {
    let o = vodswarm(&["generate", "--sessions", "0"]);
    assert_eq!(code(&o), 1);
    assert!(!o.stderr.is_empty());
}

#[test]
fn generate_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let o = vodswarm(&["generate", "--profile", "mi", "--sessions", "30", "--seed", "11", "--out", path_str(p)]);
        assert_eq!(code(&o), 0);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn generate_without_out_writes_trace_to_stdout() {
    let o = vodswarm(&["generate", "--sessions", "3", "--seed", "1"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains(HEADER.trim_end()));
    let summary: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert!(summary["m"].as_u64().unwrap() > 0);
}

#[test]
fn analyze_single_hot_position() {
    let dir = TempDir::new().unwrap();
    let mut text = String::from(HEADER);
    for i in 0..100 {
        text.push_str(&format!("c{i},{i},0,1,play\n"));
    }
    let trace = write(&dir, "hot.csv", &text);
    let an = stdout_json(&vodswarm(&["analyze", &trace, "--object-len", "10"]));
    assert_eq!(an["p"], 99);
    assert_eq!(an["m"], 100);
    assert_eq!(an["d"].as_f64().unwrap(), 0.01);
    assert_eq!(an["top_positions"][0]["count"], 100);
}

#[test]
fn analyze_all_distinct_positions() {
    let dir = TempDir::new().unwrap();
    let mut text = String::from(HEADER);
    for i in 0..10 {
        text.push_str(&format!("c{i},{i},{i},{},play\n", i + 1));
    }
    let trace = write(&dir, "spread.csv", &text);
    let an = stdout_json(&vodswarm(&["analyze", &trace, "--object-len", "10"]));
    assert_eq!(an["d"].as_f64().unwrap(), 1.0);
    assert_eq!(an["category"], "high");
}

#[test]
fn analyze_csv_format() {
    let dir = TempDir::new().unwrap();
    let trace = write(&dir, "t.csv", &format!("{HEADER}c1,0,0,5,play\n"));
    let o = vodswarm(&["analyze", &trace, "--object-len", "10", "--format", "csv"]);
    assert_eq!(code(&o), 0);
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.starts_with("n,temporal_dispersion,p,m,d,category"));
    assert_eq!(out.lines().count(), 2);
}

#[test]
fn analyze_input_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let empty = write(&dir, "empty.csv", HEADER);
    let o = vodswarm(&["analyze", &empty, "--object-len", "10"]);
    assert_eq!(code(&o), 2);

    let bad = write(&dir, "bad.csv", &format!("{HEADER}c1,0,0,5,play\nc2,1,x,5,play\n"));
    let o = vodswarm(&["analyze", &bad, "--object-len", "10"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));

    let o = vodswarm(&["analyze", path_str(&dir.path().join("missing.csv"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn simulate_single_leecher_from_seed() {
    let dir = TempDir::new().unwrap();
    let trace = write(&dir, "one.csv", &format!("# object_length=60\n{HEADER}c1,0,0,60,play\n"));
    let r = stdout_json(&vodswarm(&[
        "simulate", "--policy", "titfortat", "--trace", &trace, "--initial-seeds", "1", "--set",
        "peers.seed_upload=10485760",
    ]));
    assert_eq!(r["aggregate"]["leechers"], 1);
    assert_eq!(r["peers"][0]["continuity_index"].as_f64().unwrap(), 1.0);
    assert_eq!(r["totals"]["uploaded_bytes"], r["totals"]["downloaded_bytes"]);
}

#[test]
fn simulate_without_policy_lists_names() {
    let o = vodswarm(&["simulate", "--sessions", "3"]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    for name in ["dispersiongreedy", "titfortat", "ynp", "perpieceoptimistic"] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn simulate_unknown_config_field_is_usage_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "cfg.toml", "[policy]\nname = \"random\"\n[run]\nsede = 3\n");
    let o = vodswarm(&["simulate", "--config", &cfg]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("sede"));
}

#[test]
fn simulate_is_reproducible_and_writes_event_log() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "cfg.toml",
        "[policy]\nname = \"dispersiongreedy\"\n[workload]\nsessions = 8\nobject_length = 60.0\nmean_session_gap = 3.0\n",
    );
    let mut outputs = Vec::new();
    for i in 0..2 {
        let log = dir.path().join(format!("log{i}.ndjson"));
        let o = vodswarm(&["simulate", "--config", &cfg, "--seed", "5", "--event-log", path_str(&log)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push((o.stdout, std::fs::read(&log).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    let first: Value = serde_json::from_slice(outputs[0].1.split(|b| *b == b'\n').next().unwrap()).unwrap();
    for key in ["t", "seq", "kind", "actor", "payload"] {
        assert!(first.get(key).is_some(), "missing {key}");
    }

    let other = vodswarm(&["simulate", "--config", &cfg, "--seed", "6"]);
    assert_ne!(other.stdout, outputs[0].0);
}

#[test]
fn simulate_csv_lists_peers() {
    let o = vodswarm(&["simulate", "--policy", "llp", "--sessions", "4", "--object-len", "30", "--format", "csv"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 5);
}

const SPEC: &str = r#"
repetitions = 3
base_seed = 1

[base.workload]
sessions = 6
object_length = 40.0

[[runs]]
label = "greedy"
policy = { name = "dispersiongreedy" }

[[runs]]
label = "random"
policy = { name = "random" }
"#;

#[test]
fn compare_writes_tables() {
    let dir = TempDir::new().unwrap();
    let spec = write(&dir, "exp.toml", SPEC);
    let out = dir.path().join("results");
    let o = vodswarm(&["compare", &spec, "--workers", "2", "--out", path_str(&out)]);
    let cmp = stdout_json(&o);
    assert_eq!(cmp["rows"].as_array().unwrap().len(), 2);
    assert_eq!(cmp["runs"].as_array().unwrap().len(), 6);
    let csv = std::fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("label,runs,"));
    assert!(out.join("comparison.json").exists());
}

#[test]
fn compare_rejects_empty_spec() {
    let dir = TempDir::new().unwrap();
    let spec = write(&dir, "empty.toml", "repetitions = 3\n");
    let o = vodswarm(&["compare", &spec]);
    assert_eq!(code(&o), 1);
}

#[test]
fn unknown_subcommand_is_usage_error() {
    assert_eq!(code(&vodswarm(&["frobnicate"])), 1);
    assert_eq!(code(&vodswarm(&["--help"])), 0);
}
