//! Run records: one pretty-printed JSON document per file, named
//! `<scenario>__<index>.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::monitors::{DeviationStats, OutcomeLabel};
use crate::plc::RunLevel;
use crate::session::SessionPhase;

pub const RECORD_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub format_version: u32,
    pub scenario_id: String,
    pub family: String,
    pub run_index: u32,
    pub seed: u64,
    pub config_digest: String,
    pub trajectory_id: String,
    pub observed: BTreeMap<SessionPhase, BTreeSet<OutcomeLabel>>,
    pub expected: BTreeMap<SessionPhase, BTreeSet<OutcomeLabel>>,
    /// Observed is a superset of expected, per phase.
    pub matched: BTreeMap<SessionPhase, bool>,
    /// First tick of each observed label, per phase.
    pub crossings: BTreeMap<SessionPhase, BTreeMap<OutcomeLabel, u64>>,
    pub deviation: DeviationStats,
    /// Trace events and derived counts keyed by kind.
    pub event_counts: BTreeMap<String, u64>,
    pub uca_counts: BTreeMap<String, u64>,
    pub first_uca_tick: Option<u64>,
    pub first_hazard_tick: Option<u64>,
    pub injected_ticks: u64,
    pub homing_complete_tick: Option<u64>,
    pub estop_latch_tick: Option<u64>,
    /// Ticks where brake state disagreed with the PLC state.
    pub brake_state_violations: u64,
    pub final_sw_state: RunLevel,
    pub final_plc_state: RunLevel,
    pub phase_ticks: BTreeMap<SessionPhase, u64>,
    pub wall_clock_ms: u64,
}

impl RunRecord {
    pub fn file_name(scenario_id: &str, run_index: u32) -> String {
        format!("{scenario_id}__{run_index:03}.json")
    }

    pub fn all_matched(&self) -> bool {
        self.matched.values().all(|m| *m)
    }

    /// Copy with wall-clock fields cleared, for determinism comparisons.
    pub fn without_wall_clock(&self) -> RunRecord {
        RunRecord {
            wall_clock_ms: 0,
            ..self.clone()
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RecordError {
    #[error("PARSE_ERROR {path}:{line}:{column}: {msg}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        msg: String,
    },
    #[error("VERSION_MISMATCH {path}: format version {found}, expected {expected}")]
    VersionMismatch { path: String, found: u64, expected: u32 },
    #[error("I/O error on {path}: {msg}")]
    Io { path: String, msg: String },
}

fn io_err(path: &Path, e: std::io::Error) -> RecordError {
    RecordError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    }
}

/// Writes `<dir>/<file_name>` through a temporary file and a rename, so a
/// reader never sees a partial record.
pub fn write_run_record(dir: &Path, rec: &RunRecord) -> Result<PathBuf, RecordError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join(RunRecord::file_name(&rec.scenario_id, rec.run_index));
    let tmp = dir.join(format!(".{}.tmp", RunRecord::file_name(&rec.scenario_id, rec.run_index)));
    let mut text = serde_json::to_string_pretty(rec).expect("record serializes");
    text.push('\n');
    std::fs::write(&tmp, text).map_err(|e| io_err(&tmp, e))?;
    std::fs::rename(&tmp, &path).map_err(|e| io_err(&path, e))?;
    Ok(path)
}

pub fn parse_run_record(text: &str, path: &str) -> Result<RunRecord, RecordError> {
    let parse_err = |e: serde_json::Error| RecordError::Parse {
        path: path.to_string(),
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    };
    let value: serde_json::Value = serde_json::from_str(text).map_err(parse_err)?;
    match value.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(RECORD_FORMAT_VERSION) => {}
        Some(found) => {
            return Err(RecordError::VersionMismatch {
                path: path.to_string(),
                found,
                expected: RECORD_FORMAT_VERSION,
            })
        }
        None => {
            return Err(RecordError::Parse {
                path: path.to_string(),
                line: 1,
                column: 1,
                msg: "missing format_version".into(),
            })
        }
    }
    serde_json::from_str(text).map_err(parse_err)
}

pub fn read_run_record(path: &Path) -> Result<RunRecord, RecordError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_run_record(&text, &path.display().to_string())
}

/// Every `*.json` record in `dir`, sorted by scenario id then run index.
pub fn read_records_dir(dir: &Path) -> Result<Vec<RunRecord>, RecordError> {
    let entries = std::fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| io_err(dir, e))?;
        let p = entry.path();
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if name.starts_with('.') || p.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        out.push(read_run_record(&p)?);
    }
    out.sort_by(|a, b| (&a.scenario_id, a.run_index).cmp(&(&b.scenario_id, b.run_index)));
    Ok(out)
}
