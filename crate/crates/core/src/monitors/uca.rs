//! Unsafe-control-action monitors: context predicates evaluated per tick,
//! merged into runs of consecutive ticks.

use serde::{Deserialize, Serialize};

use crate::geometry::{dist, wrap_angle, Quat, Side};
use crate::plant::{forward_kinematics, PlantConfig};
use crate::plc::RunLevel;

use super::{Thresholds, Trace, TraceRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum UcaKind {
    /// Desired joints do not realise the desired pose.
    IkInconsistent,
    /// Desired joints moved the commanded end effector further than the
    /// jump threshold in one tick.
    UnintendedJump,
    /// End effectors closer than the proximity limit while commanding.
    ArmProximity,
    /// Software stopped or pedal-up while the PLC is in pedal-down.
    MismatchPedalDown,
    /// Software pedal-down while the PLC is pedal-up or initialising.
    MismatchPedalUp,
    /// Software not stopped while the PLC is in E-STOP.
    MismatchEstop,
    /// Commanded motion that the hardware does not carry out.
    CommandNotFollowed,
    /// Current reaching the motors while the software is stopped or
    /// pedal-up.
    CommandWhileStopped,
    /// The PLC state the software read differs from what the PLC reported.
    RunlevelMismatch,
}

impl UcaKind {
    pub const ALL: [UcaKind; 9] = [
        UcaKind::IkInconsistent,
        UcaKind::UnintendedJump,
        UcaKind::ArmProximity,
        UcaKind::MismatchPedalDown,
        UcaKind::MismatchPedalUp,
        UcaKind::MismatchEstop,
        UcaKind::CommandNotFollowed,
        UcaKind::CommandWhileStopped,
        UcaKind::RunlevelMismatch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UcaKind::IkInconsistent => "IK_INCONSISTENT",
            UcaKind::UnintendedJump => "UNINTENDED_JUMP",
            UcaKind::ArmProximity => "ARM_PROXIMITY",
            UcaKind::MismatchPedalDown => "MISMATCH_SW_STOPPED_PLC_PEDAL_DOWN",
            UcaKind::MismatchPedalUp => "MISMATCH_SW_PEDAL_DOWN_PLC_UP_OR_INIT",
            UcaKind::MismatchEstop => "MISMATCH_SW_RUNNING_PLC_ESTOP",
            UcaKind::CommandNotFollowed => "COMMAND_NOT_FOLLOWED",
            UcaKind::CommandWhileStopped => "COMMAND_WHILE_STOPPED",
            UcaKind::RunlevelMismatch => "RUNLEVEL_FEEDBACK_MISMATCH",
        }
    }

    /// Hazard classes the action can lead to.
    pub fn hazards(self) -> &'static str {
        match self {
            UcaKind::IkInconsistent | UcaKind::UnintendedJump => "H1",
            UcaKind::ArmProximity => "H2",
            UcaKind::MismatchPedalDown | UcaKind::CommandWhileStopped => "H1 H2",
            UcaKind::MismatchPedalUp
            | UcaKind::MismatchEstop
            | UcaKind::CommandNotFollowed
            | UcaKind::RunlevelMismatch => "H3",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UcaContext {
    pub sw_state: RunLevel,
    pub plc_state: RunLevel,
    pub believed_plc_state: RunLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UcaRecord {
    pub kind: UcaKind,
    pub side: Option<Side>,
    pub start_tick: u64,
    /// Inclusive.
    pub end_tick: u64,
    /// Snapshot at `start_tick`.
    pub context: UcaContext,
}

impl UcaRecord {
    pub fn ticks(&self) -> u64 {
        self.end_tick - self.start_tick + 1
    }

    pub fn overlaps(&self, range: &std::ops::Range<u64>) -> bool {
        self.start_tick < range.end && self.end_tick >= range.start
    }
}

fn words_nonzero(w: &[i32; 4]) -> bool {
    w.iter().any(|&x| x != 0)
}

/// Predicates that hold at row `i`, as `(kind, side)` pairs.
fn active_at(rows: &[TraceRow], i: usize, kin: &PlantConfig, th: &Thresholds) -> Vec<(UcaKind, Option<Side>)> {
    let r = &rows[i];
    let prev = i.checked_sub(1).map(|p| &rows[p]);
    let mut out = Vec::new();

    if r.sw_state == RunLevel::PedalDown {
        for side in Side::ALL {
            let a = side.index();
            let quat = Quat::from_components(r.desired_quat[a]);
            let fk = forward_kinematics(kin, side, &r.desired_joints[a]);
            let consistent = dist(fk.pos, r.desired_pos[a]) <= th.ik_consistency
                && (quat.norm() - 1.0).abs() <= th.quat_norm_tolerance
                && wrap_angle(quat.yaw() - fk.roll).abs() <= th.ik_consistency;
            if !consistent {
                out.push((UcaKind::IkInconsistent, Some(side)));
            }
        }
    }

    if let Some(p) = prev {
        if r.commanding() && p.commanding() {
            for side in Side::ALL {
                let a = side.index();
                let now = forward_kinematics(kin, side, &r.desired_joints[a]).pos;
                let before = forward_kinematics(kin, side, &p.desired_joints[a]).pos;
                if !(dist(now, before) <= th.jump_pos) {
                    out.push((UcaKind::UnintendedJump, Some(side)));
                }
            }
        }
    }

    if r.commanding() && dist(r.ee[0].pos, r.ee[1].pos) < th.min_arm_distance {
        out.push((UcaKind::ArmProximity, None));
    }

    let sw = r.sw_state;
    let plc = r.plc_state;
    if matches!(sw, RunLevel::EStop | RunLevel::PedalUp) && plc == RunLevel::PedalDown {
        out.push((UcaKind::MismatchPedalDown, None));
    }
    if sw == RunLevel::PedalDown && matches!(plc, RunLevel::PedalUp | RunLevel::Init) {
        out.push((UcaKind::MismatchPedalUp, None));
    }
    if sw != RunLevel::EStop && plc == RunLevel::EStop {
        out.push((UcaKind::MismatchEstop, None));
    }

    for side in Side::ALL {
        let a = side.index();
        let bus = &r.bus_words[a];
        if r.commanding() {
            let altered = r.bus_words[a] != r.issued_words[a];
            let braked = r.brakes && words_nonzero(bus);
            let severed = (0..4).any(|j| !r.cable_intact[a][j] && bus[j] != 0);
            if altered || braked || severed {
                out.push((UcaKind::CommandNotFollowed, Some(side)));
            }
        } else if words_nonzero(bus) {
            out.push((UcaKind::CommandWhileStopped, Some(side)));
        }
    }

    if let Some(p) = prev {
        if r.believed_plc_state != p.plc_state {
            out.push((UcaKind::RunlevelMismatch, None));
        }
    }
    out
}

pub fn evaluate_uca(trace: &Trace, kin: &PlantConfig, th: &Thresholds) -> Vec<UcaRecord> {
    let rows = &trace.rows;
    let mut open: Vec<UcaRecord> = Vec::new();
    let mut done: Vec<UcaRecord> = Vec::new();
    for i in 0..rows.len() {
        let r = &rows[i];
        let now = active_at(rows, i, kin, th);
        let mut still_open = Vec::with_capacity(open.len());
        for rec in open.drain(..) {
            if now.contains(&(rec.kind, rec.side)) {
                still_open.push(UcaRecord {
                    end_tick: r.tick,
                    ..rec
                });
            } else {
                done.push(rec);
            }
        }
        for (kind, side) in now {
            if !still_open.iter().any(|o| o.kind == kind && o.side == side) {
                still_open.push(UcaRecord {
                    kind,
                    side,
                    start_tick: r.tick,
                    end_tick: r.tick,
                    context: UcaContext {
                        sw_state: r.sw_state,
                        plc_state: r.plc_state,
                        believed_plc_state: r.believed_plc_state,
                    },
                });
            }
        }
        open = still_open;
    }
    done.extend(open);
    done.sort_by_key(|u| (u.start_tick, u.kind, u.side));
    done
}
