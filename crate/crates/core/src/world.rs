//! Lock-step composition of control software, PLC and plant.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::control::{ControlConfig, ControlSoftware, PacketOutcome, TickInput};
use crate::geometry::{Side, Vec3};
use crate::injection::HookRegistry;
use crate::itp::{
    encode_packet, generate_trajectory, packet_stream, ConsolePacket, TrajectoryError,
    TrajectorySample, TrajectoryShape,
};
use crate::monitors::{Thresholds, Trace, TraceEvent, TraceRow};
use crate::plant::{forward_kinematics, Plant, PlantConfig, JOINTS};
use crate::plc::{Plc, PlcConfig, RunLevel};
use crate::session::SessionConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub plant: PlantConfig,
    pub control: ControlConfig,
    pub plc: PlcConfig,
    pub session: SessionConfig,
    pub thresholds: Thresholds,
}

impl SimConfig {
    /// End-effector home positions implied by the control configuration.
    pub fn home_positions(&self) -> [Vec3; 2] {
        Side::ALL.map(|s| forward_kinematics(&self.plant, s, &self.control.q_home).pos)
    }

    /// Stable hash of every configuration value plus the trajectory id.
    pub fn digest(&self, trajectory_id: &str) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        h.update(b"\0");
        h.update(trajectory_id.as_bytes());
        hex::encode(h.finalize())
    }
}

/// Console trajectory played during the teleoperation window.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: String,
    pub samples: Vec<TrajectorySample>,
}

impl Trajectory {
    pub fn generated(shape: TrajectoryShape, cfg: &SimConfig) -> Result<Self, TrajectoryError> {
        let id = match shape {
            TrajectoryShape::Circle => "circle",
            TrajectoryShape::Line => "line",
        };
        let samples = generate_trajectory(
            shape,
            cfg.session.teleop_ticks,
            cfg.session.amplitude_m,
            cfg.home_positions(),
        )?;
        Ok(Trajectory {
            id: id.to_string(),
            samples,
        })
    }

    /// Loaded trajectories are identified by a hash of their content.
    pub fn from_samples(samples: Vec<TrajectorySample>) -> Self {
        let text = crate::itp::format_trajectory(&samples);
        let digest = hex::encode(Sha256::digest(text.as_bytes()));
        Trajectory {
            id: format!("file:{}", &digest[..16]),
            samples,
        }
    }

    /// Absolute reference position at session tick `tick`, if the
    /// trajectory covers it.
    pub fn reference_at(&self, session: &SessionConfig, tick: u64) -> Option<[Vec3; 2]> {
        let t = tick.checked_sub(session.teleop_start())?;
        let first = self.samples.first()?.t_ms;
        let idx = usize::try_from(t).ok()?;
        let s = self.samples.get(idx).filter(|s| s.t_ms == first + t)?;
        Some(s.arms.map(|a| a.pos_um.map(|u| f64::from(u) * 1e-6)))
    }
}

/// Per-tick console packets for a whole session: idle packets while
/// homing, then the trajectory stream. Sequence numbers run on across both.
pub fn session_packets(session: &SessionConfig, traj: &Trajectory) -> Vec<Option<ConsolePacket>> {
    let total = session.total_ticks() as usize;
    let period = session.packet_period_ms.max(1);
    let mut out = vec![None; total];
    let mut seq: u32 = 0;
    for (tick, slot) in out.iter_mut().enumerate().take(session.homing_ticks as usize) {
        if (tick as u64).is_multiple_of(period) {
            *slot = Some(ConsolePacket::idle(seq));
            seq = seq.wrapping_add(1);
        }
    }
    let base = session.teleop_start();
    let t0 = traj.samples.first().map_or(0, |s| s.t_ms);
    let rebased: Vec<TrajectorySample> = traj
        .samples
        .iter()
        .map(|s| TrajectorySample {
            t_ms: s.t_ms - t0,
            ..*s
        })
        .collect();
    for (t, pkt) in packet_stream(&rebased, period) {
        let tick = base + t;
        if tick >= session.total_ticks() {
            break;
        }
        if let Some(mut p) = pkt {
            p.sequence = p.sequence.wrapping_add(seq);
            out[tick as usize] = Some(p);
        }
    }
    out
}

pub struct SimWorld {
    pub cfg: SimConfig,
    pub plant: Plant,
    pub software: ControlSoftware,
    pub plc: Plc,
    pub hooks: HookRegistry,
    packets: Vec<Option<ConsolePacket>>,
    tick: u64,
    console_pedal: bool,
    trace: Option<Trace>,
}

impl SimWorld {
    pub fn new(cfg: SimConfig, traj: &Trajectory, hooks: HookRegistry, record: bool) -> Self {
        let plant = Plant::new(cfg.plant.clone(), cfg.control.q_rest);
        let software = ControlSoftware::new(cfg.control.clone(), cfg.plant.clone());
        let plc = Plc::new(cfg.plc.clone());
        let packets = session_packets(&cfg.session, traj);
        let trace = record.then(|| Trace::with_capacity(packets.len()));
        SimWorld {
            cfg,
            plant,
            software,
            plc,
            hooks,
            packets,
            tick: 0,
            console_pedal: false,
            trace,
        }
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn finished(&self) -> bool {
        self.tick >= self.cfg.session.total_ticks()
    }

    pub fn step(&mut self) {
        let t = self.tick;
        let phase = self.cfg.session.phase_of(t);
        let pkt = self.packets.get(t as usize).copied().flatten();
        if let Some(p) = &pkt {
            self.console_pedal = p.pedal;
        }
        let bytes = pkt.map(|p| encode_packet(&p));
        let plc_before = self.plc.state();
        let out = self.software.tick(
            TickInput {
                tick: t,
                phase,
                encoders: self.plant.encoders(),
                plc_state: plc_before,
                packet: bytes.as_ref().map(|b| &b[..]),
            },
            &self.hooks,
        );
        let plc = self.plc.tick(out.output_word, t);
        if t == self.cfg.session.start_press_tick {
            self.plc.press_start();
        }
        let scale = self.cfg.control.dac_scale;
        let currents = out.bus_words.map(|arm| arm.map(|w| f64::from(w) * scale));
        let plant_events = self.plant.step(currents, plc.brakes_engaged, t);

        if let Some(trace) = &mut self.trace {
            let st = &self.software.state;
            let mut events: Vec<TraceEvent> =
                plant_events.iter().map(|e| TraceEvent::Plant(e.kind)).collect();
            for side in Side::ALL {
                if out.ik_failure[side.index()] {
                    events.push(TraceEvent::IkFailure(side));
                }
            }
            if out.overdrive {
                events.push(TraceEvent::OverdriveEstop);
            }
            if matches!(out.packet, PacketOutcome::Stale | PacketOutcome::DecodeError) {
                events.push(TraceEvent::PacketDropped);
            }
            let mut cable_intact = [[true; JOINTS]; 2];
            for (a, arm) in self.plant.arms.iter().enumerate() {
                for (j, js) in arm.joints.iter().enumerate() {
                    cable_intact[a][j] = js.cable_intact;
                }
            }
            trace.rows.push(TraceRow {
                tick: t,
                sw_state: st.sw_state,
                plc_state: plc.state,
                believed_plc_state: st.believed_plc_state,
                brakes: plc.brakes_engaged,
                console_pedal: self.console_pedal,
                pedal_flag: st.pedal,
                desired_pos: st.desired_pos,
                desired_quat: st.desired_quat.map(|q| q.components()),
                desired_joints: st.desired_joints,
                est_q: st.est_q,
                est_v: st.est_v,
                q: [self.plant.arms[0].q(), self.plant.arms[1].q()],
                v: [self.plant.arms[0].v(), self.plant.arms[1].v()],
                issued_words: out.issued_words,
                bus_words: out.bus_words,
                ee: self.plant.ee(),
                output_word: out.output_word,
                watchdog_bit: out.output_word & crate::plc::bits::WATCHDOG != 0,
                homing_restarts: st.homing.restarts,
                injected: out.injected,
                cable_intact,
                events,
            });
        }
        self.tick += 1;
    }

    pub fn run_to_end(&mut self) {
        while !self.finished() {
            self.step();
        }
    }

    pub fn plc_state(&self) -> RunLevel {
        self.plc.state()
    }

    pub fn take_trace(&mut self) -> Option<Trace> {
        self.trace.take()
    }

    pub fn trace(&self) -> Option<&Trace> {
        self.trace.as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle(cfg: &SimConfig) -> Trajectory {
        Trajectory::generated(TrajectoryShape::Circle, cfg).unwrap()
    }

    #[test]
    fn packets_cover_session_with_running_sequence() {
        let cfg = SimConfig::default();
        let pk = session_packets(&cfg.session, &circle(&cfg));
        assert_eq!(pk.len(), 30_000);
        for (t, p) in pk.iter().enumerate() {
            let p = p.unwrap();
            assert_eq!(p.sequence as usize, t);
            assert_eq!(p.pedal, t >= 10_000);
        }
    }

    #[test]
    fn reference_lookup() {
        let cfg = SimConfig::default();
        let tr = circle(&cfg);
        assert!(tr.reference_at(&cfg.session, 9_999).is_none());
        let r = tr.reference_at(&cfg.session, 10_000).unwrap();
        let home = cfg.home_positions();
        for a in 0..2 {
            for k in 0..3 {
                assert!((r[a][k] - home[a][k]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn digest_changes_with_config() {
        let a = SimConfig::default();
        let mut b = a.clone();
        b.control.kp[0] = 0.0;
        assert_ne!(a.digest("circle"), b.digest("circle"));
        assert_ne!(a.digest("circle"), a.digest("line"));
        assert_eq!(a.digest("circle"), a.clone().digest("circle"));
    }
}
