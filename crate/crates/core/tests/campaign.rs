use std::path::Path;

use telesim::campaign::{
    golden_run, parse_run_record, read_records_dir, report, run_campaign, run_seed, run_single, write_run_record,
    CampaignConfig, CampaignError, RecordError, RunRecord, DEFAULT_RUNS,
};
use telesim::injection::{default_library, parse_library, ScenarioRecord};
use telesim::itp::TrajectoryShape;
use telesim::monitors::OutcomeLabel;
use telesim::session::SessionPhase;
use telesim::world::{SimConfig, Trajectory};

const SMALL_LIBRARY: &str = "\
id: vii-plc0
desc: PLC state reads zero
source_row: vii
expect_homing: H3_UNAVAILABLE
expect_teleop: H3_UNAVAILABLE
site: GET_USB_PLC_STATE
value: 0

id: ix-encoder
desc: encoder out of range during teleoperation
source_row: ix
expect_teleop: MITIGATED_ESTOP
site: GET_USB_ENCODERS
value: OUT_OF_RANGE
phase: TELEOP
runs: 3
";

fn config(dir: &Path, library: Vec<ScenarioRecord>) -> CampaignConfig {
    let sim = SimConfig::default();
    CampaignConfig {
        library,
        runs: None,
        base_seed: 9,
        trajectory: Trajectory::generated(TrajectoryShape::Circle, &sim).unwrap(),
        sim,
        out_dir: dir.to_path_buf(),
        resume: false,
        jobs: 2,
        write_traces: false,
    }
}

fn one_record() -> RunRecord {
    let sim = SimConfig::default();
    let traj = Trajectory::generated(TrajectoryShape::Circle, &sim).unwrap();
    let lib = parse_library(SMALL_LIBRARY).unwrap();
    run_single(&lib[0], 4, run_seed(0, &lib[0].id, 4), &traj, &sim, false).unwrap().record
}

#[test]
fn seeds_are_stable_and_distinct() {
    assert_eq!(run_seed(0, "ii-pos-10", 3), run_seed(0, "ii-pos-10", 3));
    assert_ne!(run_seed(0, "ii-pos-10", 3), run_seed(0, "ii-pos-10", 4));
    assert_eq!(run_seed(5, "x", 0) ^ run_seed(0, "x", 0), 5);
}

#[test]
fn run_count_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), parse_library(SMALL_LIBRARY).unwrap());
    assert_eq!(cfg.runs_for(&cfg.library[0]), DEFAULT_RUNS);
    assert_eq!(cfg.runs_for(&cfg.library[1]), 3);
    assert_eq!(cfg.plan().len(), DEFAULT_RUNS as usize + 3);
    cfg.runs = Some(2);
    assert_eq!(cfg.runs_for(&cfg.library[1]), 2);
    assert_eq!(cfg.plan(), vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
}

#[test]
fn record_roundtrips_through_disk() {
    let rec = one_record();
    assert!(rec.observed[&SessionPhase::Teleop].contains(&OutcomeLabel::H3Unavailable));
    let dir = tempfile::tempdir().unwrap();
    let path = write_run_record(dir.path(), &rec).unwrap();
    assert_eq!(path.file_name().unwrap(), "vii-plc0__004.json");
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(parse_run_record(&text, "x").unwrap(), rec);
    assert_eq!(read_records_dir(dir.path()).unwrap(), vec![rec]);
}

#[test]
fn newer_format_version_is_rejected() {
    let rec = one_record();
    let text = serde_json::to_string_pretty(&rec).unwrap().replace("\"format_version\": 1", "\"format_version\": 2");
    assert_eq!(
        parse_run_record(&text, "r.json"),
        Err(RecordError::VersionMismatch {
            path: "r.json".into(),
            found: 2,
            expected: 1
        })
    );
}

#[test]
fn malformed_record_reports_location() {
    let text = "{\n  \"format_version\": 1,\n  oops\n}\n";
    match parse_run_record(text, "bad.json") {
        Err(RecordError::Parse { line, column, .. }) => assert_eq!((line, column), (3, 3)),
        other => panic!("{other:?}"),
    }
    assert!(matches!(parse_run_record("{}", "e.json"), Err(RecordError::Parse { .. })));
}

#[test]
fn reader_skips_hidden_and_foreign_files() {
    let rec = one_record();
    let dir = tempfile::tempdir().unwrap();
    write_run_record(dir.path(), &rec).unwrap();
    std::fs::write(dir.path().join(".half.json.tmp"), "{").unwrap();
    std::fs::write(dir.path().join(".hidden.json"), "{").unwrap();
    std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
    assert_eq!(read_records_dir(dir.path()).unwrap().len(), 1);
    std::fs::write(dir.path().join("broken.json"), "[").unwrap();
    assert!(matches!(read_records_dir(dir.path()), Err(RecordError::Parse { .. })));
}

#[test]
fn empty_report_has_header_only() {
    let rep = report(&[], 0.005, 0.001).unwrap();
    assert_eq!(rep.runs, 0);
    assert_eq!(rep.to_text().lines().count(), 1);
    assert_eq!(rep.to_csv().lines().count(), 1);
    assert!(rep.to_csv().starts_with("scenario,family,runs,matched,match_rate,"));
}

#[test]
fn mixed_configurations_are_refused() {
    let a = one_record();
    let mut b = a.clone();
    b.run_index = 5;
    b.config_digest = "different".into();
    match report(&[a, b], 0.005, 0.001) {
        Err(CampaignError::ConfigMismatch(d)) => assert_eq!(d.len(), 2),
        other => panic!("{other:?}"),
    }
}

#[test]
fn small_campaign_matches_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), parse_library(SMALL_LIBRARY).unwrap());
    cfg.runs = Some(2);
    let first = run_campaign(&cfg).unwrap();
    assert_eq!((first.simulated, first.skipped, first.records.len()), (4, 0, 4));
    assert!(first.records.iter().all(RunRecord::all_matched));

    let rep = report(&first.records, 0.005, 0.001).unwrap();
    assert_eq!(rep.scenarios.len(), 2);
    assert!(rep.scenarios.iter().all(|s| s.match_rate() == 1.0));
    assert!(rep.to_text().contains("ix-encoder"));

    cfg.resume = true;
    let again = run_campaign(&cfg).unwrap();
    assert_eq!((again.simulated, again.skipped), (0, 4));
    assert_eq!(again.records, first.records);
}

#[test]
fn unreachable_home_fails_golden() {
    let mut sim = SimConfig::default();
    sim.control.kp = [0.0; 4];
    let traj = Trajectory::generated(TrajectoryShape::Circle, &sim).unwrap();
    assert!(matches!(golden_run(&traj, &sim), Err(CampaignError::GoldenFailed(_))));
}

#[test]
fn shipped_library_ids_are_unique() {
    let lib = default_library();
    let ids: std::collections::BTreeSet<&str> = lib.iter().map(|s| s.id.as_str()).collect();
    assert_eq!(ids.len(), lib.len());
}
