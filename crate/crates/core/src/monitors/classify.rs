//! Golden-run comparison and hazard outcome labelling.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::geometry::dist;
use crate::plant::PlantEventKind;
use crate::plc::RunLevel;
use crate::session::{SessionConfig, SessionPhase};

use super::{Trace, TraceEvent, UcaRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OutcomeLabel {
    NoImpact,
    MitigatedEstop,
    H1Position,
    H1Velocity,
    H2Stress,
    H3Unavailable,
}

impl OutcomeLabel {
    pub const ALL: [OutcomeLabel; 6] = [
        OutcomeLabel::NoImpact,
        OutcomeLabel::MitigatedEstop,
        OutcomeLabel::H1Position,
        OutcomeLabel::H1Velocity,
        OutcomeLabel::H2Stress,
        OutcomeLabel::H3Unavailable,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OutcomeLabel::NoImpact => "NO_IMPACT",
            OutcomeLabel::MitigatedEstop => "MITIGATED_ESTOP",
            OutcomeLabel::H1Position => "H1_POSITION",
            OutcomeLabel::H1Velocity => "H1_VELOCITY",
            OutcomeLabel::H2Stress => "H2_STRESS",
            OutcomeLabel::H3Unavailable => "H3_UNAVAILABLE",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        OutcomeLabel::ALL.into_iter().find(|l| l.name() == s)
    }

    fn is_h1_or_h2(self) -> bool {
        matches!(
            self,
            OutcomeLabel::H1Position | OutcomeLabel::H1Velocity | OutcomeLabel::H2Stress
        )
    }
}

pub fn format_labels(set: &BTreeSet<OutcomeLabel>) -> String {
    if set.is_empty() {
        return "-".into();
    }
    set.iter().map(|l| l.name()).collect::<Vec<_>>().join("+")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Per-tick end-effector displacement counted as an abrupt jump (m).
    pub jump_pos: f64,
    /// Lower bound of a "small" jump, used only for reporting (m).
    pub small_jump: f64,
    /// RMS end-effector deviation from golden during commanded motion (m).
    pub deviation_rms: f64,
    /// End-effector speed (m/s).
    pub overspeed: f64,
    pub brake_cycle_limit: u32,
    pub brake_cycle_window: u64,
    pub homing_restart_limit: u32,
    /// Continuous PLC E-STOP duration counted as unavailability (ticks).
    pub estop_latch_limit: u64,
    pub unresponsive_window: u64,
    pub unresponsive_golden_motion: f64,
    pub unresponsive_actual_motion: f64,
    /// Homing must finish by this multiple of the golden homing time.
    pub homing_timeout_factor: u64,
    /// Desired joints vs desired pose agreement (m, rad).
    pub ik_consistency: f64,
    pub quat_norm_tolerance: f64,
    pub min_arm_distance: f64,
    pub dt: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            jump_pos: 0.005,
            small_jump: 0.001,
            deviation_rms: 0.010,
            overspeed: 0.5,
            brake_cycle_limit: 10,
            brake_cycle_window: 5_000,
            homing_restart_limit: 3,
            estop_latch_limit: 5_000,
            unresponsive_window: 2_000,
            unresponsive_golden_motion: 0.005,
            unresponsive_actual_motion: 0.0005,
            homing_timeout_factor: 2,
            ik_consistency: 1e-6,
            quat_norm_tolerance: 1e-3,
            min_arm_distance: 0.005,
            dt: 0.001,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseStats {
    pub ticks: u64,
    /// RMS over all compared ticks (worse arm per tick).
    pub rms_deviation: f64,
    /// RMS over ticks where the golden run was commanding motion.
    pub rms_commanded: f64,
    pub max_deviation: f64,
    /// Largest single-tick end-effector displacement.
    pub max_jump: f64,
    pub max_speed: f64,
    pub motion_actual: f64,
    pub motion_golden: f64,
    pub motion_deficit: f64,
    pub truncated: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DeviationStats {
    pub phases: BTreeMap<SessionPhase, PhaseStats>,
}

fn step_len(trace: &Trace, i: usize, arm: usize) -> f64 {
    if i == 0 {
        0.0
    } else {
        dist(trace.rows[i].ee[arm].pos, trace.rows[i - 1].ee[arm].pos)
    }
}

fn max_step(trace: &Trace, i: usize) -> f64 {
    step_len(trace, i, 0).max(step_len(trace, i, 1))
}

fn deviation(trace: &Trace, golden: &Trace, i: usize) -> f64 {
    (0..2)
        .map(|a| dist(trace.rows[i].ee[a].pos, golden.rows[i].ee[a].pos))
        .fold(0.0, f64::max)
}

/// Compares over the common prefix; a shorter trace is flagged truncated.
pub fn compare_golden(trace: &Trace, golden: &Trace, session: &SessionConfig, th: &Thresholds) -> DeviationStats {
    let n = trace.len().min(golden.len()) as u64;
    let truncated = trace.len() < golden.len();
    let mut out = DeviationStats::default();
    for phase in SessionPhase::ALL {
        let range = session.phase_range(phase);
        let mut st = PhaseStats {
            truncated,
            ..PhaseStats::default()
        };
        let (mut sq, mut sq_cmd, mut n_cmd) = (0.0, 0.0, 0u64);
        for t in range.start..range.end.min(n) {
            let i = t as usize;
            let d = deviation(trace, golden, i);
            sq += d * d;
            if golden.rows[i].commanding() {
                sq_cmd += d * d;
                n_cmd += 1;
            }
            st.max_deviation = st.max_deviation.max(d);
            let jump = max_step(trace, i);
            st.max_jump = st.max_jump.max(jump);
            st.motion_actual += step_len(trace, i, 0) + step_len(trace, i, 1);
            st.motion_golden += step_len(golden, i, 0) + step_len(golden, i, 1);
            st.ticks += 1;
        }
        if st.ticks > 0 {
            st.rms_deviation = (sq / st.ticks as f64).sqrt();
        }
        if n_cmd > 0 {
            st.rms_commanded = (sq_cmd / n_cmd as f64).sqrt();
        }
        st.max_speed = st.max_jump / th.dt;
        st.motion_deficit = (st.motion_golden - st.motion_actual).max(0.0);
        out.phases.insert(phase, st);
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseOutcome {
    pub labels: BTreeSet<OutcomeLabel>,
    /// First tick each label's condition was met.
    pub crossings: BTreeMap<OutcomeLabel, u64>,
    pub uca_records: usize,
    pub plant_events: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub phases: BTreeMap<SessionPhase, PhaseOutcome>,
    /// Tick at which an overdrive E-STOP was latched by the PLC, if one
    /// fired.
    pub estop_latch_tick: Option<u64>,
    pub mitigated: bool,
}

impl Classification {
    pub fn labels(&self, phase: SessionPhase) -> BTreeSet<OutcomeLabel> {
        self.phases.get(&phase).map(|p| p.labels.clone()).unwrap_or_default()
    }

    /// Earliest hazard-label tick in any phase.
    pub fn first_hazard_tick(&self) -> Option<u64> {
        self.phases
            .values()
            .flat_map(|p| {
                p.crossings
                    .iter()
                    .filter(|(l, _)| !matches!(l, OutcomeLabel::NoImpact | OutcomeLabel::MitigatedEstop))
                    .map(|(_, t)| *t)
            })
            .min()
    }
}

fn first_in(range: &std::ops::Range<u64>, mut ticks: impl Iterator<Item = u64>) -> Option<u64> {
    ticks.find(|t| range.contains(t))
}

/// Crossings as `(label, tick)`: for each phase, the first tick inside it
/// at which each condition holds.
fn crossings(
    trace: &Trace,
    golden: &Trace,
    golden_homing_tick: u64,
    session: &SessionConfig,
    th: &Thresholds,
) -> Vec<(OutcomeLabel, u64)> {
    use OutcomeLabel::*;
    let n = trace.len().min(golden.len());
    let rows = &trace.rows;

    let jumps: Vec<u64> = (1..n).filter(|&i| max_step(trace, i) > th.jump_pos).map(|i| i as u64).collect();
    let fast: Vec<u64> = (1..n)
        .filter(|&i| max_step(trace, i) / th.dt > th.overspeed && max_step(golden, i) / th.dt <= th.overspeed)
        .map(|i| i as u64)
        .collect();
    let stress_events: Vec<u64> = rows
        .iter()
        .filter(|r| {
            r.plant_events().any(|k| {
                matches!(
                    k,
                    PlantEventKind::CableBreak { .. }
                        | PlantEventKind::FloorCollision { .. }
                        | PlantEventKind::ArmArmCollision
                        | PlantEventKind::JointLimitHit { .. }
                )
            })
        })
        .map(|r| r.tick)
        .collect();
    let engagements: Vec<u64> = rows
        .windows(2)
        .filter(|w| !w[0].brakes && w[1].brakes)
        .map(|w| w[1].tick)
        .collect();
    let limit = th.brake_cycle_limit as usize;
    let cycling: Vec<u64> = (limit..engagements.len())
        .filter(|&k| engagements[k] - engagements[k - limit] < th.brake_cycle_window)
        .map(|k| engagements[k])
        .collect();
    let restarts = rows
        .iter()
        .enumerate()
        .filter(|(i, r)| {
            r.homing_restarts >= th.homing_restart_limit
                && (*i == 0 || rows[i - 1].homing_restarts < th.homing_restart_limit)
        })
        .map(|(_, r)| r.tick);
    let restarts: Vec<u64> = restarts.collect();

    let deadline = th.homing_timeout_factor * golden_homing_tick;
    let timeout = ((deadline as usize) < rows.len() && trace.homing_complete_tick().is_none_or(|t| t > deadline))
        .then_some(deadline);
    let mut latched = Vec::new();
    let mut since: Option<u64> = None;
    for r in rows {
        if r.plc_state == RunLevel::EStop {
            let s = *since.get_or_insert(r.tick);
            if r.tick - s + 1 >= th.estop_latch_limit {
                latched.push(r.tick);
            }
        } else {
            since = None;
        }
    }
    let w = th.unresponsive_window as usize;
    let mut unresponsive = Vec::new();
    if n > w {
        let mut actual = [vec![0.0; n + 1], vec![0.0; n + 1]];
        let mut gold = [vec![0.0; n + 1], vec![0.0; n + 1]];
        for a in 0..2 {
            for i in 0..n {
                actual[a][i + 1] = actual[a][i] + step_len(trace, i, a);
                gold[a][i + 1] = gold[a][i] + step_len(golden, i, a);
            }
        }
        for end in w..=n {
            let stuck = (0..2).any(|a| {
                gold[a][end] - gold[a][end - w] >= th.unresponsive_golden_motion
                    && actual[a][end] - actual[a][end - w] < th.unresponsive_actual_motion
            });
            if stuck {
                unresponsive.push((end - 1) as u64);
            }
        }
    }

    let mut out = Vec::new();
    for phase in SessionPhase::ALL {
        let range = session.phase_range(phase);
        let mut push = |label, t: Option<u64>| {
            if let Some(t) = t {
                out.push((label, t));
            }
        };
        push(H1Position, first_in(&range, jumps.iter().copied()));
        push(H1Velocity, first_in(&range, fast.iter().copied()));

        // Sustained deviation during commanded motion, counted only once the
        // arm has itself moved in this phase: a robot that never leaves its
        // pose is unavailable, not misplaced. The crossing is where the final
        // above-threshold stretch of the running RMS begins.
        let (mut sq, mut cnt) = (0.0, 0u64);
        let mut above_since: Option<u64> = None;
        let mut path = 0.0;
        for t in range.start..range.end.min(n as u64) {
            let i = t as usize;
            if t > range.start {
                path += max_step(trace, i);
            }
            if !golden.rows[i].commanding() || path < th.unresponsive_actual_motion {
                continue;
            }
            let d = deviation(trace, golden, i);
            sq += d * d;
            cnt += 1;
            if (sq / cnt as f64).sqrt() > th.deviation_rms {
                above_since.get_or_insert(t);
            } else {
                above_since = None;
            }
        }
        push(H1Position, above_since);

        push(H2Stress, first_in(&range, stress_events.iter().copied()));
        push(H2Stress, first_in(&range, cycling.iter().copied()));
        push(H2Stress, first_in(&range, restarts.iter().copied()));

        push(H3Unavailable, first_in(&range, timeout.into_iter()));
        push(H3Unavailable, first_in(&range, latched.iter().copied()));
        push(H3Unavailable, first_in(&range, unresponsive.iter().copied()));
        if (trace.len() as u64) < range.end && trace.len() < golden.len() {
            push(H3Unavailable, Some((trace.len() as u64).max(range.start)));
        }
    }
    out
}

pub fn classify_outcome(
    trace: &Trace,
    golden: &Trace,
    golden_homing_tick: u64,
    ucas: &[UcaRecord],
    session: &SessionConfig,
    th: &Thresholds,
) -> Classification {
    let all = crossings(trace, golden, golden_homing_tick, session, th);

    let overdrive = trace
        .rows
        .iter()
        .find(|r| r.events.contains(&TraceEvent::OverdriveEstop))
        .map(|r| r.tick);
    let latch = overdrive.map(|o| {
        trace
            .rows
            .iter()
            .skip(o as usize)
            .find(|r| r.plc_state == RunLevel::EStop)
            .map_or(trace.len() as u64, |r| r.tick)
    });
    let mitigated = match latch {
        Some(l) => !all.iter().any(|(lab, t)| lab.is_h1_or_h2() && *t <= l),
        None => false,
    };

    let last_tick = trace.len().saturating_sub(1) as u64;
    let mut phases = BTreeMap::new();
    for phase in SessionPhase::ALL {
        let range = session.phase_range(phase);
        let mut po = PhaseOutcome::default();
        for (lab, t) in &all {
            if !range.contains(t) {
                continue;
            }
            if mitigated && *t > latch.unwrap() {
                continue;
            }
            let e = po.crossings.entry(*lab).or_insert(*t);
            *e = (*e).min(*t);
        }
        if mitigated && range.end > latch.unwrap() && range.start <= last_tick.max(latch.unwrap()) {
            po.crossings.insert(OutcomeLabel::MitigatedEstop, latch.unwrap().max(range.start));
        }
        po.labels = po.crossings.keys().copied().collect();
        po.uca_records = ucas.iter().filter(|u| u.overlaps(&range)).count();
        po.plant_events = trace
            .rows
            .iter()
            .filter(|r| range.contains(&r.tick))
            .map(|r| r.plant_events().count())
            .sum();
        if po.labels.is_empty() && po.uca_records == 0 && po.plant_events == 0 {
            po.labels.insert(OutcomeLabel::NoImpact);
        }
        phases.insert(phase, po);
    }
    Classification {
        phases,
        estop_latch_tick: latch,
        mitigated,
    }
}
