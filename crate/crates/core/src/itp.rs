//! Master-console command packets and input trajectories.
//!
//! Wire layout (little-endian, 74 bytes):
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 2    | magic `0x4954`                          |
//! | 2      | 1    | version (1)                             |
//! | 3      | 1    | pedal (0 or 1)                          |
//! | 4      | 1    | mode (0 = cartesian)                    |
//! | 5      | 1    | reserved (0)                            |
//! | 6      | 4    | sequence number                         |
//! | 10     | 32   | LEFT arm: delta_pos 3×i32 µm, orientation 4×i32 (w,x,y,z, 1e-9 units), grasp i32 mdeg |
//! | 42     | 32   | RIGHT arm, same layout                  |
//!
//! Trajectory files are whitespace-separated text, one sample per line:
//!
//! ```text
//! t_ms xL yL zL qwL qxL qyL qzL xR yR zR qwR qxR qyR qzR graspL graspR pedal
//! ```
//!
//! Positions are absolute micrometres, quaternion components are decimal
//! numbers, grasps are millidegrees, pedal is 0 or 1. `#` starts a comment.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::geometry::{Quat, Side};

pub const MAGIC: u16 = 0x4954;
pub const VERSION: u8 = 1;
pub const PACKET_LEN: usize = 74;
/// Fixed-point scale of quaternion words.
pub const QUAT_SCALE: f64 = 1e-9;
pub const QUAT_ONE: i32 = 1_000_000_000;
const ARM_LEN: usize = 32;
const HEADER_LEN: usize = 10;
const TRAJ_COLUMNS: usize = 18;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Mode {
    Cartesian,
}

/// One arm's share of a console packet, in wire units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArmCommand {
    pub delta_pos_um: [i32; 3],
    /// w, x, y, z scaled by 1e9.
    pub orientation: [i32; 4],
    pub grasp_mdeg: i32,
}

impl ArmCommand {
    pub const IDLE: ArmCommand = ArmCommand {
        delta_pos_um: [0; 3],
        orientation: [QUAT_ONE, 0, 0, 0],
        grasp_mdeg: 0,
    };

    pub fn orientation_quat(&self) -> Quat {
        Quat::from_fixed(self.orientation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConsolePacket {
    pub sequence: u32,
    pub pedal: bool,
    pub mode: Mode,
    /// Indexed by [`Side::index`].
    pub arms: [ArmCommand; 2],
}

impl ConsolePacket {
    pub fn idle(sequence: u32) -> Self {
        ConsolePacket {
            sequence,
            pedal: false,
            mode: Mode::Cartesian,
            arms: [ArmCommand::IDLE; 2],
        }
    }

    pub fn arm(&self, side: Side) -> &ArmCommand {
        &self.arms[side.index()]
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodecError {
    #[error("bad magic 0x{0:04x}")]
    BadMagic(u16),
    #[error("bad length {0} (expected {PACKET_LEN})")]
    BadLength(usize),
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("pedal byte {0} not in {{0,1}}")]
    BadPedalByte(u8),
    #[error("unknown mode byte {0}")]
    BadMode(u8),
    #[error("{side:?} quaternion norm {norm} outside [0.999, 1.001]")]
    BadQuaternionNorm { side: Side, norm: f64 },
}

pub fn encode_packet(pkt: &ConsolePacket) -> [u8; PACKET_LEN] {
    let mut out = [0u8; PACKET_LEN];
    out[0..2].copy_from_slice(&MAGIC.to_le_bytes());
    out[2] = VERSION;
    out[3] = u8::from(pkt.pedal);
    out[4] = match pkt.mode {
        Mode::Cartesian => 0,
    };
    out[5] = 0;
    out[6..10].copy_from_slice(&pkt.sequence.to_le_bytes());
    for (i, arm) in pkt.arms.iter().enumerate() {
        let base = HEADER_LEN + i * ARM_LEN;
        let words = arm
            .delta_pos_um
            .iter()
            .chain(arm.orientation.iter())
            .chain(std::iter::once(&arm.grasp_mdeg));
        for (k, w) in words.enumerate() {
            let off = base + 4 * k;
            out[off..off + 4].copy_from_slice(&w.to_le_bytes());
        }
    }
    out
}

fn read_i32(bytes: &[u8], off: usize) -> i32 {
    i32::from_le_bytes([bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]])
}

pub fn decode_packet(bytes: &[u8]) -> Result<ConsolePacket, CodecError> {
    if bytes.len() != PACKET_LEN {
        return Err(CodecError::BadLength(bytes.len()));
    }
    let magic = u16::from_le_bytes([bytes[0], bytes[1]]);
    if magic != MAGIC {
        return Err(CodecError::BadMagic(magic));
    }
    if bytes[2] != VERSION {
        return Err(CodecError::BadVersion(bytes[2]));
    }
    let pedal = match bytes[3] {
        0 => false,
        1 => true,
        b => return Err(CodecError::BadPedalByte(b)),
    };
    let mode = match bytes[4] {
        0 => Mode::Cartesian,
        b => return Err(CodecError::BadMode(b)),
    };
    let sequence = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]);
    let mut arms = [ArmCommand::IDLE; 2];
    for (i, arm) in arms.iter_mut().enumerate() {
        let base = HEADER_LEN + i * ARM_LEN;
        let mut words = [0i32; 8];
        for (k, w) in words.iter_mut().enumerate() {
            *w = read_i32(bytes, base + 4 * k);
        }
        arm.delta_pos_um = [words[0], words[1], words[2]];
        arm.orientation = [words[3], words[4], words[5], words[6]];
        arm.grasp_mdeg = words[7];
        let norm = arm.orientation_quat().norm();
        if !(0.999..=1.001).contains(&norm) {
            return Err(CodecError::BadQuaternionNorm {
                side: Side::ALL[i],
                norm,
            });
        }
    }
    Ok(ConsolePacket {
        sequence,
        pedal,
        mode,
        arms,
    })
}

// ---------------------------------------------------------------------------
// Trajectories

/// Absolute console pose for one arm, in wire units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArmPose {
    pub pos_um: [i32; 3],
    pub orientation: [i32; 4],
    pub grasp_mdeg: i32,
}

impl ArmPose {
    pub fn orientation_quat(&self) -> Quat {
        Quat::from_fixed(self.orientation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrajectorySample {
    pub t_ms: u64,
    pub arms: [ArmPose; 2],
    pub pedal: bool,
}

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: time {t_ms} does not increase")]
    NonMonotonicTime { line: usize, t_ms: u64 },
    #[error("line {line}: gap {gap} ms differs from sample period {period} ms")]
    IrregularGap { line: usize, gap: u64, period: u64 },
    #[error("amplitude {0} m is outside the workspace (must be in [0, 0.1))")]
    AmplitudeOutOfWorkspace(f64),
    #[error("duration must be positive")]
    EmptyDuration,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn load_trajectory(path: impl AsRef<Path>) -> Result<Vec<TrajectorySample>, TrajectoryError> {
    let text = std::fs::read_to_string(path)?;
    parse_trajectory(&text)
}

fn parse_col<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T, TrajectoryError> {
    tok.parse().map_err(|_| TrajectoryError::Parse {
        line,
        msg: format!("invalid {what} `{tok}`"),
    })
}

fn quat_word(tok: &str, line: usize) -> Result<i32, TrajectoryError> {
    let v: f64 = parse_col(tok, line, "quaternion component")?;
    let scaled = (v / QUAT_SCALE).round();
    if !scaled.is_finite() || scaled.abs() > i32::MAX as f64 {
        return Err(TrajectoryError::Parse {
            line,
            msg: format!("quaternion component `{tok}` out of range"),
        });
    }
    Ok(scaled as i32)
}

pub fn parse_trajectory(text: &str) -> Result<Vec<TrajectorySample>, TrajectoryError> {
    let mut out: Vec<TrajectorySample> = Vec::new();
    let mut period: Option<u64> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let cols: Vec<&str> = content.split_whitespace().collect();
        if cols.len() != TRAJ_COLUMNS {
            return Err(TrajectoryError::Parse {
                line,
                msg: format!("expected {TRAJ_COLUMNS} columns, found {}", cols.len()),
            });
        }
        let t_ms: u64 = parse_col(cols[0], line, "time")?;
        let mut arms = [ArmPose {
            pos_um: [0; 3],
            orientation: [QUAT_ONE, 0, 0, 0],
            grasp_mdeg: 0,
        }; 2];
        for (a, arm) in arms.iter_mut().enumerate() {
            let c = 1 + 7 * a;
            for k in 0..3 {
                arm.pos_um[k] = parse_col(cols[c + k], line, "position")?;
            }
            for k in 0..4 {
                arm.orientation[k] = quat_word(cols[c + 3 + k], line)?;
            }
            arm.grasp_mdeg = parse_col(cols[15 + a], line, "grasp")?;
        }
        let pedal = match cols[17] {
            "0" => false,
            "1" => true,
            other => {
                return Err(TrajectoryError::Parse {
                    line,
                    msg: format!("pedal must be 0 or 1, got `{other}`"),
                })
            }
        };
        if let Some(prev) = out.last() {
            if t_ms <= prev.t_ms {
                return Err(TrajectoryError::NonMonotonicTime { line, t_ms });
            }
            let gap = t_ms - prev.t_ms;
            match period {
                None => period = Some(gap),
                Some(p) if p != gap => {
                    return Err(TrajectoryError::IrregularGap { line, gap, period: p })
                }
                _ => {}
            }
        }
        out.push(TrajectorySample { t_ms, arms, pedal });
    }
    Ok(out)
}

pub fn format_trajectory(samples: &[TrajectorySample]) -> String {
    let mut s = String::from(
        "# t_ms xL yL zL qwL qxL qyL qzL xR yR zR qwR qxR qyR qzR graspL graspR pedal\n",
    );
    for smp in samples {
        write!(s, "{}", smp.t_ms).unwrap();
        for arm in &smp.arms {
            for p in arm.pos_um {
                write!(s, " {p}").unwrap();
            }
            for q in arm.orientation {
                write!(s, " {:.9}", f64::from(q) * QUAT_SCALE).unwrap();
            }
        }
        writeln!(
            s,
            " {} {} {}",
            smp.arms[0].grasp_mdeg,
            smp.arms[1].grasp_mdeg,
            u8::from(smp.pedal)
        )
        .unwrap();
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum TrajectoryShape {
    Line,
    Circle,
}

/// Period of one circle revolution / one line stroke, before rounding to a
/// whole number of cycles per trajectory.
pub const NOMINAL_CYCLE_MS: u64 = 10_000;

/// Generates a trajectory starting at `home` (absolute end-effector positions
/// in metres, one per arm) with 1 ms samples over `[0, duration_ms]`.
///
/// The cycle count is rounded so the path always closes on itself.
pub fn generate_trajectory(
    shape: TrajectoryShape,
    duration_ms: u64,
    amplitude_m: f64,
    home: [[f64; 3]; 2],
) -> Result<Vec<TrajectorySample>, TrajectoryError> {
    if duration_ms == 0 {
        return Err(TrajectoryError::EmptyDuration);
    }
    if !(0.0..0.1).contains(&amplitude_m) {
        return Err(TrajectoryError::AmplitudeOutOfWorkspace(amplitude_m));
    }
    let cycles = ((duration_ms as f64 / NOMINAL_CYCLE_MS as f64).round()).max(1.0);
    let cycle_ms = duration_ms as f64 / cycles;
    let to_um = |m: f64| (m * 1e6).round() as i32;
    let samples = (0..=duration_ms)
        .map(|t| {
            let theta = 2.0 * PI * (t as f64) / cycle_ms;
            let offset = match shape {
                TrajectoryShape::Circle => [
                    amplitude_m * (theta.cos() - 1.0),
                    amplitude_m * theta.sin(),
                    0.0,
                ],
                TrajectoryShape::Line => [0.5 * amplitude_m * (1.0 - theta.cos()), 0.0, 0.0],
            };
            let mut arms = [ArmPose {
                pos_um: [0; 3],
                orientation: [QUAT_ONE, 0, 0, 0],
                grasp_mdeg: 0,
            }; 2];
            for (arm, h) in arms.iter_mut().zip(home.iter()) {
                for k in 0..3 {
                    arm.pos_um[k] = to_um(h[k] + offset[k]);
                }
            }
            TrajectorySample {
                t_ms: t,
                arms,
                pedal: true,
            }
        })
        .collect();
    Ok(samples)
}

/// Turns absolute samples into the per-tick packet stream of a console that
/// sends one packet every `period_ms`.
///
/// Tick `k` corresponds to trajectory time `k` ms. Position deltas and
/// orientation deltas (`conj(prev) * cur`) are taken between successive
/// emitted packets; the first packet carries zero motion.
pub fn packet_stream(
    traj: &[TrajectorySample],
    period_ms: u64,
) -> Vec<(u64, Option<ConsolePacket>)> {
    let period = period_ms.max(1);
    let Some(last) = traj.last() else {
        return Vec::new();
    };
    let mut out = Vec::with_capacity(last.t_ms as usize + 1);
    let mut prev: Option<&TrajectorySample> = None;
    let mut seq: u32 = 0;
    let mut cursor = 0usize;
    for tick in 0..=last.t_ms {
        let mut pkt = None;
        if tick % period == 0 {
            while cursor < traj.len() && traj[cursor].t_ms < tick {
                cursor += 1;
            }
            if cursor < traj.len() && traj[cursor].t_ms == tick {
                let cur = &traj[cursor];
                let mut arms = [ArmCommand::IDLE; 2];
                for (a, arm) in arms.iter_mut().enumerate() {
                    let c = &cur.arms[a];
                    arm.grasp_mdeg = c.grasp_mdeg;
                    if let Some(p) = prev {
                        let pa = &p.arms[a];
                        for k in 0..3 {
                            arm.delta_pos_um[k] = c.pos_um[k].wrapping_sub(pa.pos_um[k]);
                        }
                        let d = pa.orientation_quat().conj().mul(&c.orientation_quat());
                        arm.orientation = d.to_fixed();
                    }
                }
                pkt = Some(ConsolePacket {
                    sequence: seq,
                    pedal: cur.pedal,
                    mode: Mode::Cartesian,
                    arms,
                });
                seq = seq.wrapping_add(1);
                prev = Some(cur);
            }
        }
        out.push((tick, pkt));
    }
    out
}
