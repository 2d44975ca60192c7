use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_contagion-lab"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(["--quiet"]).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn world(dir: &Path) {
    ok(dir, &["--seed", "5", "synth", "graph", "--nodes", "1000", "--out-dir", "w"]);
    ok(
        dir,
        &["--seed", "5", "synth", "cascade", "--graph", "w/graph.csv", "--beta", "0.05", "--r", "0.001", "--reference-shocks", "--shock-prob", "0.3", "--out-dir", "obs"],
    );
}

#[test]
fn help_exits_zero() {
    let out = bin().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("simulate"));
}

#[test]
fn missing_required_flag_is_usage_error() {
    let out = bin().args(["simulate", "--params", "p.json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--graph"));
}

#[test]
fn missing_input_file_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["calibrate", "--graph", "nope.csv", "--log", "nope.csv", "--out-dir", "c"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn pipeline_writes_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    world(d);
    ok(d, &["calibrate", "--graph", "w/graph.csv", "--log", "obs/log.csv", "--reference-shocks", "--activity-mean", "0.01", "--r", "0.003", "--out-dir", "cal"]);
    ok(d, &["simulate", "--graph", "w/graph.csv", "--params", "cal/params.json", "--runs", "5", "--out", "sim/events.jsonl"]);
    ok(d, &["train", "--events", "sim/events.jsonl", "--rounds", "20", "--out", "model/model.json"]);
    ok(d, &["decompose", "--model", "model/model.json", "--graph", "w/graph.csv", "--log", "obs/log.csv", "--reference-shocks", "--out-dir", "dec"]);
    ok(d, &["degree-order-test", "--graph", "w/graph.csv", "--log", "obs/log.csv", "--out", "order/order.json"]);
    ok(d, &["match", "--graph", "w/graph.csv", "--log", "obs/log.csv", "--kind", "dose", "--out-dir", "m"]);
    ok(d, &["report", "--dir", ".", "--out", "report.md"]);

    for (sub, cmd) in [
        ("w", "synth-graph"),
        ("obs", "synth-cascade"),
        ("cal", "calibrate"),
        ("sim", "simulate"),
        ("model", "train"),
        ("dec", "decompose"),
        ("order", "degree-order-test"),
        ("m", "match"),
    ] {
        let path = d.join(sub).join(format!("{cmd}.manifest.json"));
        let m: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(m["command"], cmd);
        let outputs = m["outputs"].as_array().unwrap();
        assert!(!outputs.is_empty(), "{cmd} lists no outputs");
        for o in outputs {
            let f = d.join(sub).join(o["path"].as_str().unwrap());
            assert_eq!(std::fs::metadata(&f).unwrap().len(), o["bytes"].as_u64().unwrap());
            assert!(o["bytes"].as_u64().unwrap() > 0);
        }
    }
    let report = std::fs::read_to_string(d.join("report.md")).unwrap();
    assert!(report.contains("decompose"));
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    world(d);
    ok(d, &["calibrate", "--graph", "w/graph.csv", "--log", "obs/log.csv", "--reference-shocks", "--activity-mean", "0.01", "--r", "0.003", "--out-dir", "cal"]);
    for t in ["1", "2"] {
        let out = format!("sim{t}/events.jsonl");
        ok(d, &["--seed", "3", "--threads", t, "simulate", "--graph", "w/graph.csv", "--params", "cal/params.json", "--runs", "6", "--out", &out]);
    }
    let a = std::fs::read(d.join("sim1/events.jsonl")).unwrap();
    let b = std::fs::read(d.join("sim2/events.jsonl")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn command_line_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("g.toml"), "nodes = 300\nmean_degree = 4.0\nout_dir = \"from_config\"\n").unwrap();
    ok(d, &["synth", "graph", "--config", "g.toml", "--nodes", "200"]);
    let m: Value = serde_json::from_str(&std::fs::read_to_string(d.join("from_config/synth-graph.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["nodes"], 200);
    assert_eq!(m["config"]["mean_degree"], 4.0);

    std::fs::write(d.join("bad.toml"), "[nested]\nnodes = 3\n").unwrap();
    let out = run(d, &["synth", "graph", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(1));
}
