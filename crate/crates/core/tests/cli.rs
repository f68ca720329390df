use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fedsim::cli::{self, parse_metrics};
use fedsim::model_mgmt::Scheme;
use fedsim::simulator::{Scenario, Summary};
use fedsim::TaskKind;

fn fedsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedsim")).args(args).output().expect("binary runs")
}

fn write_scenario(dir: &Path, name: &str, s: &Scenario) -> PathBuf {
    let path = dir.join(format!("{name}.json"));
    fs::write(&path, serde_json::to_string_pretty(s).unwrap()).unwrap();
    path
}

fn run(scenario: &Path, out: &Path) -> Output {
    fedsim(&["run", "--scenario", scenario.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

fn small() -> Scenario {
    let mut s = Scenario::minimal(TaskKind::BinaryLogistic, 2, 3, 21);
    s.data.n_features = 19;
    s
}

#[test]
fn run_produces_outputs_and_summary_matches_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_scenario(tmp.path(), "s", &small());
    let out = tmp.path().join("run");
    let o = run(&path, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    for line in text.lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }
    let records = parse_metrics(&text).unwrap();
    let summary: Summary = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary, Summary::fold(&records));
    assert!(out.join("coversion.log").is_file());
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_scenario(tmp.path(), "s", &small());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run(&path, &a).status.success());
    assert!(run(&path, &b).status.success());
    assert_eq!(fs::read(a.join("metrics.jsonl")).unwrap(), fs::read(b.join("metrics.jsonl")).unwrap());
    assert_eq!(fs::read(a.join("coversion.log")).unwrap(), fs::read(b.join("coversion.log")).unwrap());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{ \"version\": 1, \"seed\": 1,\n  \"rounds\": 2,\n  \"data\": { \"tsk\": 1 } }").unwrap();
    let out = tmp.path().join("never");
    let o = run(&bad, &out);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
    assert!(!out.exists());

    let mut s = small();
    s.version = 2;
    let invalid = write_scenario(tmp.path(), "invalid", &s);
    let o = fedsim(&["validate", "--scenario", invalid.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("version: expected 1"));

    let good = write_scenario(tmp.path(), "good", &small());
    let o = fedsim(&["validate", "--scenario", good.to_str().unwrap()]);
    assert!(o.status.success());
}

#[test]
fn lineage_rows_unknown_versions_and_tampering() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_scenario(tmp.path(), "s", &small());
    let out = tmp.path().join("run");
    assert!(run(&path, &out).status.success());
    let dir = out.to_str().unwrap();

    let o = fedsim(&["lineage", "--out", dir, "--version", "1"]);
    assert!(o.status.success());
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 3, "{stdout}");

    let o = fedsim(&["lineage", "--out", dir, "--version", "42"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("version not found"));

    // Flip one byte inside the second record's body.
    let log = out.join("coversion.log");
    let bytes = fs::read(&log).unwrap();
    let first_len = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
    let mut tampered = bytes.clone();
    tampered[4 + first_len + 4 + 70] ^= 1;
    fs::write(&log, tampered).unwrap();
    let o = fedsim(&["lineage", "--out", dir, "--version", "1"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("record 1"), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn compare_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let plain = write_scenario(tmp.path(), "plain", &small());
    let mut s = small();
    s.compression = Some(Scheme::Topk { k: 2 });
    let packed = write_scenario(tmp.path(), "packed", &s);
    let (a, b) = (tmp.path().join("plain"), tmp.path().join("topk"));
    assert!(run(&plain, &a).status.success());
    assert!(run(&packed, &b).status.success());

    let cmp = cli::cmd_compare(&[a.clone(), b.clone()]).unwrap();
    assert!(cmp.runs[1].summary.total_bytes_up < cmp.runs[0].summary.total_bytes_up);
    assert!(cmp.runs[1].delta.total_bytes_up < 0);

    let same = cli::cmd_compare(&[a.clone(), a.clone()]).unwrap();
    assert_eq!(same.runs[1].delta, cli::CompareDelta { rounds_to_convergence: same.runs[1].delta.rounds_to_convergence, ..Default::default() });

    let json = tmp.path().join("cmp.json");
    let o = fedsim(&[
        "compare",
        "--runs",
        b.to_str().unwrap(),
        a.to_str().unwrap(),
        b.to_str().unwrap(),
        "--json",
        json.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let header = String::from_utf8(o.stdout).unwrap().lines().next().unwrap().to_string();
    let columns: Vec<&str> = header.split_whitespace().collect();
    assert_eq!(columns, ["metric", "topk", "plain", "topk"]);
    let parsed: serde_json::Value = serde_json::from_str(&fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(parsed["runs"].as_array().unwrap().len(), 3);

    let o = fedsim(&["compare", "--runs", a.to_str().unwrap(), tmp.path().join("missing").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
