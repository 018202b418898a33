use std::process::{Command, Output};

use telesim::world::SimConfig;

fn sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sim")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&sim(&[])), 1);
    assert_eq!(code(&sim(&["run", "--scenario", "vii-plc0"])), 1);
    assert_eq!(code(&sim(&["frobnicate"])), 1);
}

#[test]
fn help_exits_0() {
    assert_eq!(code(&sim(&["--help"])), 0);
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(code(&sim(&["report", "--in", dir.path().join("missing").to_str().unwrap()])), 2);
    assert_eq!(code(&sim(&["campaign", "--out", out, "--runs", "0"])), 2);
    assert_eq!(code(&sim(&["run", "--scenario", "no-such", "--seed", "1"])), 2);

    let bad = dir.path().join("lib.txt");
    std::fs::write(&bad, "id: x\nsite: NOWHERE\n").unwrap();
    let o = sim(&["validate-library", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("NOWHERE"));
}

#[test]
fn failing_golden_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = SimConfig::default();
    cfg.control.kp = [0.0; 4];
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let o = sim(&["golden", "--config", path.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("GOLDEN_FAILED"));
}

#[test]
fn scenarios_and_golden_succeed() {
    let o = sim(&["scenarios"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.lines().any(|l| l.starts_with("iii-dac")));

    let o = sim(&["golden"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("homing complete at tick"));
}

#[test]
fn run_campaign_report_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("recs");
    let out_s = out.to_str().unwrap();

    let o = sim(&["run", "--scenario", "viii-atmel0", "--seed", "3", "--trace", "--out", out_s]);
    assert_eq!(code(&o), 0);
    let rec: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(rec["scenario_id"], "viii-atmel0");
    assert!(out.join("viii-atmel0__000.trace.csv").exists());

    let lib = dir.path().join("lib.txt");
    std::fs::write(
        &lib,
        "id: vii-plc0\nsource_row: vii\nexpect_homing: H3_UNAVAILABLE\nsite: GET_USB_PLC_STATE\nvalue: 0\n",
    )
    .unwrap();
    let camp = dir.path().join("camp");
    let camp_s = camp.to_str().unwrap();
    let o = sim(&["campaign", "--library", lib.to_str().unwrap(), "--runs", "2", "--out", camp_s, "--jobs", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(camp.join("vii-plc0__001.json").exists());

    let csv = dir.path().join("r.csv");
    let o = sim(&["report", "--in", camp_s, "--csv", csv.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("vii-plc0"));
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 2);
}
