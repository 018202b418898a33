//! Scenario library text format.
//!
//! Records are separated by blank lines. Each line is `key: value`; `#`
//! starts a comment. Record keys:
//!
//! - `id` (required, unique), `desc`, `source_row`, `runs`
//! - `expect_homing`, `expect_teleop`: comma-separated outcome labels
//!
//! Fault keys (a `site:` line opens a new fault; the rest apply to it):
//!
//! - `site`: one of the [`Site`] names
//! - `kind`: `STUCK_AT` (default) or `INTERMITTENT`, with `period: <ticks>`
//! - `value`: a number, `OUT_OF_RANGE`, `RANDOM` or `RANDOM:<seed>`
//! - `phase`: `HOMING`, `TELEOP` or `ALWAYS` (default)
//! - `start`, `end`: absolute tick bounds (optional)

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use super::{FaultKind, FaultSpec, InjectionError, Site, Trigger, TriggerPhase, ValueSource};
use crate::monitors::OutcomeLabel;
use crate::session::SessionPhase;

pub const DEFAULT_LIBRARY: &str = include_str!("../../data/default_library.txt");

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRecord {
    pub id: String,
    pub description: String,
    pub faults: Vec<FaultSpec>,
    pub expected: BTreeMap<SessionPhase, BTreeSet<OutcomeLabel>>,
    pub runs: Option<u32>,
    pub source_row: String,
}

impl ScenarioRecord {
    pub fn expected_for(&self, phase: SessionPhase) -> BTreeSet<OutcomeLabel> {
        self.expected.get(&phase).cloned().unwrap_or_default()
    }

    /// Scenario family: the id up to the first `-`.
    pub fn family(&self) -> &str {
        self.id.split('-').next().unwrap_or(&self.id)
    }
}

pub fn default_library() -> Vec<ScenarioRecord> {
    parse_library(DEFAULT_LIBRARY).expect("shipped library parses")
}

pub fn load_scenario_library(path: impl AsRef<Path>) -> Result<Vec<ScenarioRecord>, InjectionError> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| InjectionError::Io(format!("{}: {e}", path.as_ref().display())))?;
    parse_library(&text)
}

struct Draft {
    line: usize,
    id: Option<String>,
    description: String,
    faults: Vec<FaultSpec>,
    expected: BTreeMap<SessionPhase, BTreeSet<OutcomeLabel>>,
    runs: Option<u32>,
    source_row: String,
}

impl Draft {
    fn new(line: usize) -> Self {
        Draft {
            line,
            id: None,
            description: String::new(),
            faults: Vec::new(),
            expected: BTreeMap::new(),
            runs: None,
            source_row: String::new(),
        }
    }

    fn finish(self) -> Result<ScenarioRecord, InjectionError> {
        let id = self.id.ok_or_else(|| InjectionError::Parse {
            line: self.line,
            msg: "record has no id".into(),
        })?;
        if self.expected.values().all(|s| s.is_empty()) {
            return Err(InjectionError::Parse {
                line: self.line,
                msg: format!("record `{id}` declares no expected outcome"),
            });
        }
        Ok(ScenarioRecord {
            id,
            description: self.description,
            faults: self.faults,
            expected: self.expected,
            runs: self.runs,
            source_row: self.source_row,
        })
    }
}

fn parse_labels(value: &str, line: usize) -> Result<BTreeSet<OutcomeLabel>, InjectionError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            OutcomeLabel::parse(s).ok_or_else(|| InjectionError::UnknownLabel {
                line,
                name: s.to_string(),
            })
        })
        .collect()
}

fn parse_num<T: std::str::FromStr>(value: &str, line: usize, key: &str) -> Result<T, InjectionError> {
    value.parse().map_err(|_| InjectionError::Parse {
        line,
        msg: format!("invalid {key} `{value}`"),
    })
}

fn parse_value(value: &str, line: usize) -> Result<ValueSource, InjectionError> {
    match value {
        "OUT_OF_RANGE" => Ok(ValueSource::OutOfRange),
        "RANDOM" => Ok(ValueSource::Random { seed: None }),
        v => {
            if let Some(seed) = v.strip_prefix("RANDOM:") {
                Ok(ValueSource::Random {
                    seed: Some(parse_num(seed, line, "random seed")?),
                })
            } else {
                let x: f64 = parse_num(v, line, "value")?;
                if !x.is_finite() {
                    return Err(InjectionError::Parse {
                        line,
                        msg: "literal must be finite".into(),
                    });
                }
                Ok(ValueSource::Literal(x))
            }
        }
    }
}

pub fn parse_library(text: &str) -> Result<Vec<ScenarioRecord>, InjectionError> {
    let mut out: Vec<ScenarioRecord> = Vec::new();
    let mut draft: Option<Draft> = None;
    let mut seen = BTreeSet::new();
    let mut flush = |draft: &mut Option<Draft>, out: &mut Vec<ScenarioRecord>| -> Result<(), InjectionError> {
        if let Some(d) = draft.take() {
            let line = d.line;
            let rec = d.finish()?;
            if !seen.insert(rec.id.clone()) {
                return Err(InjectionError::Parse {
                    line,
                    msg: format!("duplicate id `{}`", rec.id),
                });
            }
            out.push(rec);
        }
        Ok(())
    };
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if raw.trim().is_empty() {
            flush(&mut draft, &mut out)?;
            continue;
        }
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once(':').ok_or_else(|| InjectionError::Parse {
            line,
            msg: format!("expected `key: value`, got `{content}`"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        let d = draft.get_or_insert_with(|| Draft::new(line));
        let fault_key = matches!(key, "kind" | "period" | "value" | "phase" | "start" | "end");
        if fault_key && d.faults.is_empty() {
            return Err(InjectionError::Parse {
                line,
                msg: format!("`{key}` before any `site`"),
            });
        }
        match key {
            "id" => d.id = Some(value.to_string()),
            "desc" => d.description = value.to_string(),
            "source_row" => d.source_row = value.to_string(),
            "runs" => {
                let r: u32 = parse_num(value, line, "runs")?;
                if r == 0 {
                    return Err(InjectionError::Parse {
                        line,
                        msg: "runs must be at least 1".into(),
                    });
                }
                d.runs = Some(r);
            }
            "expect_homing" => {
                d.expected.insert(SessionPhase::Homing, parse_labels(value, line)?);
            }
            "expect_teleop" => {
                d.expected.insert(SessionPhase::Teleop, parse_labels(value, line)?);
            }
            "site" => {
                let site = Site::parse(value).ok_or_else(|| InjectionError::UnknownSite {
                    line,
                    name: value.to_string(),
                })?;
                d.faults.push(FaultSpec {
                    site,
                    kind: FaultKind::StuckAt,
                    value: ValueSource::Literal(0.0),
                    trigger: Trigger::always(),
                });
            }
            _ => {
                let f = d.faults.last_mut().expect("checked above");
                match key {
                    "kind" => {
                        f.kind = match value {
                            "STUCK_AT" => FaultKind::StuckAt,
                            "INTERMITTENT" => FaultKind::Intermittent {
                                period: match f.kind {
                                    FaultKind::Intermittent { period } => period,
                                    FaultKind::StuckAt => 1,
                                },
                            },
                            other => {
                                return Err(InjectionError::Parse {
                                    line,
                                    msg: format!("unknown kind `{other}`"),
                                })
                            }
                        }
                    }
                    "period" => {
                        let p: u64 = parse_num(value, line, "period")?;
                        if p == 0 {
                            return Err(InjectionError::Parse {
                                line,
                                msg: "period must be at least 1".into(),
                            });
                        }
                        match &mut f.kind {
                            FaultKind::Intermittent { period } => *period = p,
                            FaultKind::StuckAt => {
                                return Err(InjectionError::Parse {
                                    line,
                                    msg: "period given for a STUCK_AT fault".into(),
                                })
                            }
                        }
                    }
                    "value" => f.value = parse_value(value, line)?,
                    "phase" => {
                        f.trigger.phase = match value {
                            "HOMING" => TriggerPhase::Homing,
                            "TELEOP" => TriggerPhase::Teleop,
                            "ALWAYS" => TriggerPhase::Always,
                            other => {
                                return Err(InjectionError::Parse {
                                    line,
                                    msg: format!("unknown phase `{other}`"),
                                })
                            }
                        }
                    }
                    "start" => f.trigger.start = Some(parse_num(value, line, "start")?),
                    "end" => f.trigger.end = Some(parse_num(value, line, "end")?),
                    other => {
                        return Err(InjectionError::Parse {
                            line,
                            msg: format!("unknown key `{other}`"),
                        })
                    }
                }
            }
        }
    }
    flush(&mut draft, &mut out)?;
    Ok(out)
}

fn format_labels(set: &BTreeSet<OutcomeLabel>) -> String {
    set.iter().map(|l| l.name()).collect::<Vec<_>>().join(", ")
}

/// Canonical text form; `parse_library(format_library(lib)) == lib`.
pub fn format_library(lib: &[ScenarioRecord]) -> String {
    let mut s = String::new();
    for (i, r) in lib.iter().enumerate() {
        if i > 0 {
            s.push('\n');
        }
        writeln!(s, "id: {}", r.id).unwrap();
        if !r.description.is_empty() {
            writeln!(s, "desc: {}", r.description).unwrap();
        }
        if !r.source_row.is_empty() {
            writeln!(s, "source_row: {}", r.source_row).unwrap();
        }
        if let Some(n) = r.runs {
            writeln!(s, "runs: {n}").unwrap();
        }
        for (phase, key) in [
            (SessionPhase::Homing, "expect_homing"),
            (SessionPhase::Teleop, "expect_teleop"),
        ] {
            if let Some(set) = r.expected.get(&phase) {
                writeln!(s, "{key}: {}", format_labels(set)).unwrap();
            }
        }
        for f in &r.faults {
            writeln!(s, "site: {}", f.site.name()).unwrap();
            match f.kind {
                FaultKind::StuckAt => writeln!(s, "kind: STUCK_AT").unwrap(),
                FaultKind::Intermittent { period } => {
                    writeln!(s, "kind: INTERMITTENT\nperiod: {period}").unwrap()
                }
            }
            match f.value {
                ValueSource::Literal(v) => writeln!(s, "value: {v}").unwrap(),
                ValueSource::OutOfRange => writeln!(s, "value: OUT_OF_RANGE").unwrap(),
                ValueSource::Random { seed: None } => writeln!(s, "value: RANDOM").unwrap(),
                ValueSource::Random { seed: Some(n) } => writeln!(s, "value: RANDOM:{n}").unwrap(),
            }
            writeln!(s, "phase: {}", f.trigger.phase.name()).unwrap();
            if let Some(t) = f.trigger.start {
                writeln!(s, "start: {t}").unwrap();
            }
            if let Some(t) = f.trigger.end {
                writeln!(s, "end: {t}").unwrap();
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_valid() {
        assert!(parse_library("").unwrap().is_empty());
        assert!(parse_library("# only a comment\n\n").unwrap().is_empty());
    }

    #[test]
    fn unknown_site_and_label() {
        let bad_site = "id: x\nexpect_teleop: H3_UNAVAILABLE\nsite: FOO\n";
        assert_eq!(
            parse_library(bad_site),
            Err(InjectionError::UnknownSite {
                line: 3,
                name: "FOO".into()
            })
        );
        let bad_label = "id: x\nexpect_teleop: H9\n";
        assert!(matches!(
            parse_library(bad_label),
            Err(InjectionError::UnknownLabel { line: 2, .. })
        ));
    }

    #[test]
    fn parse_errors_carry_lines() {
        assert!(matches!(
            parse_library("id: a\nexpect_teleop: NO_IMPACT\nperiod: 3\n"),
            Err(InjectionError::Parse { line: 3, .. })
        ));
        assert!(matches!(
            parse_library("id: a\nno colon here\n"),
            Err(InjectionError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_library("id: a\nexpect_teleop: NO_IMPACT\n\nid: a\nexpect_teleop: NO_IMPACT\n"),
            Err(InjectionError::Parse { .. })
        ));
    }

    #[test]
    fn shipped_library_roundtrips() {
        let lib = default_library();
        assert!(lib.len() >= 12);
        assert_eq!(parse_library(&format_library(&lib)).unwrap(), lib);
    }

    #[test]
    fn multi_fault_record() {
        let text = "id: combo\nexpect_teleop: H3_UNAVAILABLE\nsite: NETWORK_PEDAL\nvalue: 0\nphase: TELEOP\n\
                    site: ESTIMATE_VELOCITY\nkind: INTERMITTENT\nperiod: 7\nvalue: RANDOM:9\nstart: 5\nend: 50\n";
        let lib = parse_library(text).unwrap();
        assert_eq!(lib[0].faults.len(), 2);
        assert_eq!(lib[0].faults[1].kind, FaultKind::Intermittent { period: 7 });
        assert_eq!(lib[0].faults[1].value, ValueSource::Random { seed: Some(9) });
        assert_eq!(lib[0].faults[1].trigger.end, Some(50));
        assert_eq!(parse_library(&format_library(&lib)).unwrap(), lib);
    }
}
