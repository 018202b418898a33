use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::geometry::{Side, Vec3};
use crate::plant::{Pose, PlantEventKind, JOINTS};
use crate::plc::RunLevel;

pub const TRACE_CSV_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceEvent {
    Plant(PlantEventKind),
    IkFailure(Side),
    OverdriveEstop,
    PacketDropped,
}

impl TraceEvent {
    pub fn tag(&self) -> String {
        match self {
            TraceEvent::Plant(k) => match k {
                PlantEventKind::CableBreak { side, joint } => {
                    format!("CABLE_BREAK({}:{})", side.name(), joint + 1)
                }
                PlantEventKind::FloorCollision { side } => format!("FLOOR_COLLISION({})", side.name()),
                PlantEventKind::ArmArmCollision => "ARM_ARM_COLLISION".into(),
                PlantEventKind::JointLimitHit { side, joint } => {
                    format!("JOINT_LIMIT_HIT({}:{})", side.name(), joint + 1)
                }
                PlantEventKind::NonFiniteCurrent { side, joint } => {
                    format!("NON_FINITE_CURRENT({}:{})", side.name(), joint + 1)
                }
            },
            TraceEvent::IkFailure(side) => format!("IK_FAILURE({})", side.name()),
            TraceEvent::OverdriveEstop => "OVERDRIVE_ESTOP".into(),
            TraceEvent::PacketDropped => "PACKET_DROPPED".into(),
        }
    }
}

/// Everything observable at the end of one tick. Arrays are indexed by
/// [`Side::index`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub tick: u64,
    pub sw_state: RunLevel,
    /// PLC state after its tick.
    pub plc_state: RunLevel,
    pub believed_plc_state: RunLevel,
    pub brakes: bool,
    /// Pedal as sent by the console.
    pub console_pedal: bool,
    /// Pedal as the software believes it.
    pub pedal_flag: bool,
    pub desired_pos: [Vec3; 2],
    pub desired_quat: [[f64; 4]; 2],
    pub desired_joints: [[f64; JOINTS]; 2],
    pub est_q: [[f64; JOINTS]; 2],
    pub est_v: [[f64; JOINTS]; 2],
    /// Plant joint state after the step.
    pub q: [[f64; JOINTS]; 2],
    pub v: [[f64; JOINTS]; 2],
    pub issued_words: [[i32; JOINTS]; 2],
    pub bus_words: [[i32; JOINTS]; 2],
    pub ee: [Pose; 2],
    pub output_word: u32,
    pub watchdog_bit: bool,
    pub homing_restarts: u32,
    pub injected: u16,
    pub cable_intact: [[bool; JOINTS]; 2],
    pub events: Vec<TraceEvent>,
}

impl TraceRow {
    pub fn plant_events(&self) -> impl Iterator<Item = &PlantEventKind> {
        self.events.iter().filter_map(|e| match e {
            TraceEvent::Plant(k) => Some(k),
            _ => None,
        })
    }

    pub fn commanding(&self) -> bool {
        matches!(self.sw_state, RunLevel::Init | RunLevel::PedalDown)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

impl Trace {
    pub fn with_capacity(n: usize) -> Self {
        Trace {
            rows: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// First tick at which the software entered PEDAL_UP from INIT.
    pub fn homing_complete_tick(&self) -> Option<u64> {
        self.rows
            .windows(2)
            .find(|w| w[0].sw_state == RunLevel::Init && w[1].sw_state == RunLevel::PedalUp)
            .map(|w| w[1].tick)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.rows.len() * 600);
        writeln!(s, "# trace-csv v{TRACE_CSV_VERSION}").unwrap();
        s.push_str(&csv_header());
        s.push('\n');
        for r in &self.rows {
            write_row(&mut s, r);
        }
        s
    }
}

fn csv_header() -> String {
    let mut cols: Vec<String> = [
        "tick",
        "sw_state",
        "plc_state",
        "believed_plc_state",
        "brakes",
        "console_pedal",
        "pedal_flag",
    ]
    .iter()
    .map(|c| c.to_string())
    .collect();
    for side in ["l", "r"] {
        for k in ["x", "y", "z"] {
            cols.push(format!("{side}_des_{k}"));
        }
        for k in ["w", "x", "y", "z"] {
            cols.push(format!("{side}_des_q{k}"));
        }
        for prefix in ["des_j", "est_q", "est_v", "q", "v", "dac", "bus"] {
            for j in 1..=JOINTS {
                cols.push(format!("{side}_{prefix}{j}"));
            }
        }
        for k in ["x", "y", "z", "roll"] {
            cols.push(format!("{side}_ee_{k}"));
        }
        cols.push(format!("{side}_cables"));
    }
    for c in ["output_word", "watchdog", "homing_restarts", "injected", "events"] {
        cols.push(c.to_string());
    }
    cols.join(",")
}

fn write_row(s: &mut String, r: &TraceRow) {
    write!(
        s,
        "{},{},{},{},{},{},{}",
        r.tick,
        r.sw_state.name(),
        r.plc_state.name(),
        r.believed_plc_state.name(),
        u8::from(r.brakes),
        u8::from(r.console_pedal),
        u8::from(r.pedal_flag)
    )
    .unwrap();
    for a in 0..2 {
        for v in r.desired_pos[a].iter().chain(r.desired_quat[a].iter()) {
            write!(s, ",{v}").unwrap();
        }
        for arr in [&r.desired_joints[a], &r.est_q[a], &r.est_v[a], &r.q[a], &r.v[a]] {
            for v in arr {
                write!(s, ",{v}").unwrap();
            }
        }
        for arr in [&r.issued_words[a], &r.bus_words[a]] {
            for w in arr {
                write!(s, ",{w}").unwrap();
            }
        }
        let ee = &r.ee[a];
        write!(s, ",{},{},{},{}", ee.pos[0], ee.pos[1], ee.pos[2], ee.roll).unwrap();
        let mask: u8 = r.cable_intact[a]
            .iter()
            .enumerate()
            .map(|(j, ok)| u8::from(*ok) << j)
            .sum();
        write!(s, ",{mask}").unwrap();
    }
    let events: Vec<String> = r.events.iter().map(|e| e.tag()).collect();
    writeln!(
        s,
        ",{},{},{},{},{}",
        r.output_word,
        u8::from(r.watchdog_bit),
        r.homing_restarts,
        r.injected,
        events.join(";")
    )
    .unwrap();
}
