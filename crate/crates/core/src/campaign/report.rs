//! Campaign summary: per-scenario outcome distribution and match rate.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::monitors::{format_labels, OutcomeLabel};
use crate::session::SessionPhase;

use super::{CampaignError, RunRecord};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScenarioSummary {
    pub scenario_id: String,
    pub family: String,
    pub runs: u64,
    /// Label set (joined with `+`) to run count, per phase.
    pub distribution: BTreeMap<SessionPhase, BTreeMap<String, u64>>,
    pub expected: BTreeMap<SessionPhase, BTreeSet<OutcomeLabel>>,
    pub matched: u64,
    /// Runs whose largest per-tick jump exceeded the abrupt threshold.
    pub abrupt_jumps: u64,
    /// Runs whose largest per-tick jump was small but above the noise floor.
    pub small_jumps: u64,
}

impl ScenarioSummary {
    pub fn match_rate(&self) -> f64 {
        if self.runs == 0 {
            0.0
        } else {
            self.matched as f64 / self.runs as f64
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CampaignReport {
    pub config_digest: Option<String>,
    pub scenarios: Vec<ScenarioSummary>,
    pub runs: u64,
    /// Runs carrying each label in any phase.
    pub label_runs: BTreeMap<OutcomeLabel, u64>,
}

/// Fails with `CONFIG_MISMATCH` when records come from different
/// configurations.
pub fn report(records: &[RunRecord], jump_pos: f64, small_jump: f64) -> Result<CampaignReport, CampaignError> {
    let digests: BTreeSet<&str> = records.iter().map(|r| r.config_digest.as_str()).collect();
    if digests.len() > 1 {
        return Err(CampaignError::ConfigMismatch(
            digests.into_iter().map(String::from).collect(),
        ));
    }
    let mut by_id: BTreeMap<&str, ScenarioSummary> = BTreeMap::new();
    let mut label_runs: BTreeMap<OutcomeLabel, u64> = BTreeMap::new();
    for r in records {
        let s = by_id.entry(&r.scenario_id).or_insert_with(|| ScenarioSummary {
            scenario_id: r.scenario_id.clone(),
            family: r.family.clone(),
            expected: r.expected.clone(),
            ..ScenarioSummary::default()
        });
        s.runs += 1;
        if r.all_matched() {
            s.matched += 1;
        }
        let max_jump = r
            .deviation
            .phases
            .values()
            .map(|p| p.max_jump)
            .fold(0.0, f64::max);
        if max_jump > jump_pos {
            s.abrupt_jumps += 1;
        } else if max_jump > small_jump {
            s.small_jumps += 1;
        }
        let mut any: BTreeSet<OutcomeLabel> = BTreeSet::new();
        for (phase, labels) in &r.observed {
            *s.distribution
                .entry(*phase)
                .or_default()
                .entry(format_labels(labels))
                .or_default() += 1;
            any.extend(labels.iter().copied());
        }
        for l in any {
            *label_runs.entry(l).or_default() += 1;
        }
    }
    Ok(CampaignReport {
        config_digest: digests.into_iter().next().map(String::from),
        scenarios: by_id.into_values().collect(),
        runs: records.len() as u64,
        label_runs,
    })
}

fn distribution_text(d: Option<&BTreeMap<String, u64>>) -> String {
    match d {
        None => "-".into(),
        Some(m) => m
            .iter()
            .map(|(k, v)| format!("{k} x{v}"))
            .collect::<Vec<_>>()
            .join("; "),
    }
}

fn expected_text(e: &BTreeMap<SessionPhase, BTreeSet<OutcomeLabel>>, p: SessionPhase) -> String {
    e.get(&p).map_or_else(|| "-".into(), format_labels)
}

impl CampaignReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(
            s,
            "{:<24} {:>4} {:>6}  {:<28} {:<40} {:<28} {:<40} jumps",
            "scenario", "runs", "match", "expect_homing", "observed_homing", "expect_teleop", "observed_teleop"
        )
        .unwrap();
        for sc in &self.scenarios {
            writeln!(
                s,
                "{:<24} {:>4} {:>5.0}%  {:<28} {:<40} {:<28} {:<40} abrupt:{} small:{}",
                sc.scenario_id,
                sc.runs,
                sc.match_rate() * 100.0,
                expected_text(&sc.expected, SessionPhase::Homing),
                distribution_text(sc.distribution.get(&SessionPhase::Homing)),
                expected_text(&sc.expected, SessionPhase::Teleop),
                distribution_text(sc.distribution.get(&SessionPhase::Teleop)),
                sc.abrupt_jumps,
                sc.small_jumps,
            )
            .unwrap();
        }
        if self.runs > 0 {
            writeln!(s).unwrap();
            writeln!(s, "runs: {}  scenarios: {}", self.runs, self.scenarios.len()).unwrap();
            let count = |l| self.label_runs.get(&l).copied().unwrap_or(0);
            writeln!(
                s,
                "runs with H1_POSITION {}  H1_VELOCITY {}  H2_STRESS {}  H3_UNAVAILABLE {}  MITIGATED_ESTOP {}  NO_IMPACT {}",
                count(OutcomeLabel::H1Position),
                count(OutcomeLabel::H1Velocity),
                count(OutcomeLabel::H2Stress),
                count(OutcomeLabel::H3Unavailable),
                count(OutcomeLabel::MitigatedEstop),
                count(OutcomeLabel::NoImpact),
            )
            .unwrap();
            if let Some(d) = &self.config_digest {
                writeln!(s, "config digest: {d}").unwrap();
            }
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "scenario,family,runs,matched,match_rate,expect_homing,observed_homing,expect_teleop,observed_teleop,abrupt_jumps,small_jumps\n",
        );
        for sc in &self.scenarios {
            writeln!(
                s,
                "{},{},{},{},{:.4},{},{},{},{},{},{}",
                sc.scenario_id,
                sc.family,
                sc.runs,
                sc.matched,
                sc.match_rate(),
                expected_text(&sc.expected, SessionPhase::Homing),
                distribution_text(sc.distribution.get(&SessionPhase::Homing)),
                expected_text(&sc.expected, SessionPhase::Teleop),
                distribution_text(sc.distribution.get(&SessionPhase::Teleop)),
                sc.abrupt_jumps,
                sc.small_jumps,
            )
            .unwrap();
        }
        s
    }
}
