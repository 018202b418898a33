//! The control software: one call to [`ControlSoftware::tick`] runs the
//! whole per-millisecond pipeline.
//!
//! Stage order is fixed: get_usb_packet, state_estimate, sync_state_machine,
//! network_process, homing or inverse kinematics, pd_control,
//! overdrive_detect, torque_to_dac, put_usb_packet, update_atmel_outputs.
//! Every stage that owns an injection [`Site`] consults the hook registry
//! before its value is used downstream.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{add, Quat, Side, Vec3};
use crate::injection::{HookRegistry, Site};
use crate::itp::decode_packet;
use crate::plant::{forward_kinematics, PlantConfig, JOINTS, ROLL};
use crate::plc::{bits, RunLevel};
use crate::session::SessionPhase;

pub type Joints = [f64; JOINTS];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlConfig {
    pub kp: Joints,
    pub kd: Joints,
    /// Currents above this are clamped.
    pub i_soft: f64,
    /// Currents above this trigger a software E-STOP.
    pub i_hard: f64,
    /// Amperes per DAC count.
    pub dac_scale: f64,
    /// Homing ramp speed per joint (rad/s or m/s).
    pub homing_rate: Joints,
    pub homing_tolerance: f64,
    /// Ticks the first homed arm may wait for the other.
    pub homing_sync_window: u64,
    pub q_home: Joints,
    pub q_rest: Joints,
    /// Allowed deviation of a commanded quaternion from unit norm.
    pub quat_norm_tolerance: f64,
    pub dt: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            kp: [200.0, 200.0, 400.0, 200.0],
            kd: [5.0, 5.0, 10.0, 5.0],
            i_soft: 8.0,
            i_hard: 10.0,
            dac_scale: 0.01,
            homing_rate: [0.5, 0.5, 0.1, 0.5],
            homing_tolerance: 0.01,
            homing_sync_window: 500,
            q_home: [0.4, 1.2, 0.20, 0.0],
            q_rest: [0.0; JOINTS],
            quat_norm_tolerance: 1e-3,
            dt: 0.001,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum IkError {
    #[error("target outside the reachable annulus")]
    Unreachable,
    #[error("solution violates joint limits")]
    JointLimit,
    #[error("non-finite target")]
    NonFinite,
    #[error("orientation is not a unit quaternion")]
    BadOrientation,
}

/// Elbow-up (q2 >= 0) closed-form inverse of [`forward_kinematics`].
///
/// Roll is taken from the yaw of `orientation`, unwrapped to the branch
/// nearest `roll_hint` so the tool does not spin through 2π.
pub fn inverse_kinematics(
    plant: &PlantConfig,
    side: Side,
    pos: Vec3,
    orientation: Quat,
    roll_hint: f64,
    quat_tol: f64,
) -> Result<Joints, IkError> {
    if !pos.iter().all(|p| p.is_finite()) || !orientation.is_finite() {
        return Err(IkError::NonFinite);
    }
    let b = plant.base(side);
    let (dx, dy) = (pos[0] - b[0], pos[1] - b[1]);
    let r = dx.hypot(dy);
    let (l1, l2) = (plant.link1, plant.link2);
    let (outer, inner) = (l1 + l2, (l1 - l2).abs());
    if r > outer || r < inner {
        return Err(IkError::Unreachable);
    }
    // Half-angle form stays accurate near the straight and folded poses.
    let q2 = 2.0 * ((outer - r) * (outer + r)).sqrt().atan2(((r - inner) * (r + inner)).sqrt());
    let q1 = crate::geometry::wrap_angle(dy.atan2(dx) - (l2 * q2.sin()).atan2(l1 + l2 * q2.cos()));
    let q3 = b[2] - pos[2];
    if (orientation.norm() - 1.0).abs() > quat_tol {
        return Err(IkError::BadOrientation);
    }
    let yaw = orientation.yaw();
    let turns = ((roll_hint - yaw) / (2.0 * PI)).round();
    let q4 = yaw + turns * 2.0 * PI;
    let q = [q1, q2, q3, q4];
    if !q.iter().all(|v| v.is_finite()) {
        return Err(IkError::NonFinite);
    }
    if !plant.within_limits(&q) {
        return Err(IkError::JointLimit);
    }
    Ok(q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HomingLeg {
    ToRest,
    ToHome,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmHoming {
    pub leg: HomingLeg,
    pub ramp: Joints,
    pub homed_tick: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomingState {
    pub arms: [ArmHoming; 2],
    pub started: bool,
    pub restarts: u32,
    pub completed_tick: Option<u64>,
}

impl HomingState {
    fn idle() -> Self {
        let arm = ArmHoming {
            leg: HomingLeg::ToHome,
            ramp: [0.0; JOINTS],
            homed_tick: None,
        };
        HomingState {
            arms: [arm; 2],
            started: false,
            restarts: 0,
            completed_tick: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PacketOutcome {
    Absent,
    Accepted,
    Stale,
    DecodeError,
}

/// What the hardware side hands the software at the start of a tick.
#[derive(Debug, Clone, Copy)]
pub struct TickInput<'a> {
    pub tick: u64,
    pub phase: SessionPhase,
    pub encoders: [Joints; 2],
    pub plc_state: RunLevel,
    pub packet: Option<&'a [u8]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TickOutput {
    /// DAC words as computed by the controller, before any substitution.
    pub issued_words: [[i32; JOINTS]; 2],
    /// Words on the motor bus.
    pub bus_words: [[i32; JOINTS]; 2],
    pub output_word: u32,
    pub ik_failure: [bool; 2],
    pub overdrive: bool,
    pub packet: PacketOutcome,
    /// Bit `Site::index()` set when that site substituted a value.
    pub injected: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlState {
    pub sw_state: RunLevel,
    pub believed_plc_state: RunLevel,
    pub desired_pos: [Vec3; 2],
    pub desired_quat: [Quat; 2],
    pub desired_joints: [Joints; 2],
    pub est_q: [Joints; 2],
    pub est_v: [Joints; 2],
    pub prev_encoders: Option<[Joints; 2]>,
    pub last_seq: Option<u32>,
    pub pedal: bool,
    pub watchdog_bit: bool,
    pub watchdog_enabled: bool,
    pub overdrive_latched: bool,
    pub homing: HomingState,
    pub currents: [Joints; 2],
}

#[derive(Debug, Clone)]
pub struct ControlSoftware {
    pub cfg: ControlConfig,
    pub kin: PlantConfig,
    pub state: ControlState,
    /// Extra hook for harnesses: the watchdog bit toggles for the last time
    /// on this tick.
    pub kill_watchdog_at: Option<u64>,
}

fn to_word(v: f64) -> i32 {
    let r = v.round();
    if r.is_nan() {
        0
    } else {
        r.clamp(i32::MIN as f64, i32::MAX as f64) as i32
    }
}

struct Injector<'a> {
    hooks: &'a HookRegistry,
    tick: u64,
    phase: SessionPhase,
    mask: u16,
}

impl Injector<'_> {
    fn fire(&mut self, site: Site) -> Option<f64> {
        let v = self.hooks.fire(site, self.tick, self.phase);
        if v.is_some() {
            self.mask |= 1 << site.index();
        }
        v
    }

    fn joints(&mut self, site: Site, vals: &mut [Joints; 2]) {
        if let Some(v) = self.fire(site) {
            *vals = [[v; JOINTS]; 2];
        }
    }

    fn words(&mut self, site: Site, words: &mut [[i32; JOINTS]; 2]) {
        if let Some(v) = self.fire(site) {
            *words = [[to_word(v); JOINTS]; 2];
        }
    }
}

impl ControlSoftware {
    pub fn new(cfg: ControlConfig, kin: PlantConfig) -> Self {
        let home = Side::ALL.map(|s| forward_kinematics(&kin, s, &cfg.q_home));
        let state = ControlState {
            sw_state: RunLevel::EStop,
            believed_plc_state: RunLevel::EStop,
            desired_pos: home.map(|p| p.pos),
            desired_quat: [Quat::IDENTITY; 2],
            desired_joints: [cfg.q_rest; 2],
            est_q: [cfg.q_rest; 2],
            est_v: [[0.0; JOINTS]; 2],
            prev_encoders: None,
            last_seq: None,
            pedal: false,
            watchdog_bit: false,
            watchdog_enabled: true,
            overdrive_latched: false,
            homing: HomingState::idle(),
            currents: [[0.0; JOINTS]; 2],
        };
        ControlSoftware {
            cfg,
            kin,
            state,
            kill_watchdog_at: None,
        }
    }

    pub fn tick(&mut self, input: TickInput<'_>, hooks: &HookRegistry) -> TickOutput {
        let mut inj = Injector {
            hooks,
            tick: input.tick,
            phase: input.phase,
            mask: 0,
        };

        // get_usb_packet
        let mut encoders = input.encoders;
        inj.joints(Site::GetUsbEncoders, &mut encoders);
        let believed = match inj.fire(Site::GetUsbPlcState) {
            Some(v) => RunLevel::from_code(if v.is_finite() { v.round() as i64 } else { -1 }),
            None => input.plc_state,
        };
        self.state.believed_plc_state = believed;

        self.state_estimate(encoders, &mut inj);
        self.sync_state_machine(believed);
        let packet = self.network_process(input.packet, &mut inj);

        let mut ik_failure = [false; 2];
        match self.state.sw_state {
            RunLevel::Init => self.homing_step(input.tick),
            RunLevel::PedalDown => ik_failure = self.ik_step(),
            _ => {}
        }

        let raw = self.pd_control();
        let (currents, overdrive) = self.overdrive_detect(raw);
        self.state.currents = currents;

        // torque_to_dac
        let issued_words = currents.map(|arm| arm.map(|i| to_word(i / self.cfg.dac_scale)));
        let mut words = issued_words;
        inj.words(Site::TorqueToDac, &mut words);
        // put_usb_packet
        let mut bus_words = words;
        inj.words(Site::PutUsbCurrents, &mut bus_words);

        let output_word = self.update_atmel_outputs(input.tick, &mut inj);

        TickOutput {
            issued_words,
            bus_words,
            output_word,
            ik_failure,
            overdrive,
            packet,
            injected: inj.mask,
        }
    }

    fn state_estimate(&mut self, encoders: [Joints; 2], inj: &mut Injector<'_>) {
        let dt = self.cfg.dt;
        let mut q = encoders;
        let mut v = match self.state.prev_encoders {
            Some(prev) => {
                let mut v = [[0.0; JOINTS]; 2];
                for a in 0..2 {
                    for j in 0..JOINTS {
                        v[a][j] = (encoders[a][j] - prev[a][j]) / dt;
                    }
                }
                v
            }
            None => [[0.0; JOINTS]; 2],
        };
        self.state.prev_encoders = Some(encoders);
        inj.joints(Site::EstimatePosition, &mut q);
        inj.joints(Site::EstimateVelocity, &mut v);
        self.state.est_q = q;
        self.state.est_v = v;
    }

    fn sync_state_machine(&mut self, believed: RunLevel) {
        let st = &mut self.state;
        match (believed, st.sw_state) {
            (RunLevel::EStop, RunLevel::EStop) => {}
            (RunLevel::EStop, sw) => {
                if matches!(sw, RunLevel::PedalUp | RunLevel::PedalDown) {
                    st.watchdog_enabled = false;
                }
                st.sw_state = RunLevel::EStop;
            }
            (RunLevel::Init, RunLevel::EStop) => {
                if !st.overdrive_latched && st.watchdog_enabled {
                    let restart = st.homing.started;
                    self.begin_homing(restart);
                }
            }
            (RunLevel::Init, RunLevel::PedalUp | RunLevel::PedalDown) => self.begin_homing(true),
            (RunLevel::Init, RunLevel::Init) => {}
            (RunLevel::PedalUp | RunLevel::PedalDown, RunLevel::PedalUp) if st.pedal => {
                st.sw_state = RunLevel::PedalDown;
                self.clutch();
            }
            (RunLevel::PedalUp | RunLevel::PedalDown, RunLevel::PedalDown) if !st.pedal => {
                st.sw_state = RunLevel::PedalUp;
            }
            _ => {}
        }
    }

    fn begin_homing(&mut self, restart: bool) {
        let st = &mut self.state;
        st.sw_state = RunLevel::Init;
        if restart {
            st.homing.restarts += 1;
        }
        st.homing.started = true;
        st.homing.completed_tick = None;
        let leg = if restart { HomingLeg::ToRest } else { HomingLeg::ToHome };
        for (a, h) in st.homing.arms.iter_mut().enumerate() {
            *h = ArmHoming {
                leg,
                ramp: st.est_q[a],
                homed_tick: None,
            };
        }
    }

    /// Re-anchors the desired pose at the current estimate on pedal press.
    fn clutch(&mut self) {
        for side in Side::ALL {
            let a = side.index();
            let p = forward_kinematics(&self.kin, side, &self.state.est_q[a]);
            self.state.desired_pos[a] = p.pos;
            self.state.desired_quat[a] = Quat::from_yaw(self.state.est_q[a][ROLL]);
        }
    }

    fn network_process(&mut self, bytes: Option<&[u8]>, inj: &mut Injector<'_>) -> PacketOutcome {
        let Some(bytes) = bytes else {
            return PacketOutcome::Absent;
        };
        let pkt = match decode_packet(bytes) {
            Ok(p) => p,
            Err(_) => return PacketOutcome::DecodeError,
        };
        if matches!(self.state.last_seq, Some(last) if pkt.sequence <= last) {
            return PacketOutcome::Stale;
        }
        self.state.last_seq = Some(pkt.sequence);

        let mut dpos = pkt.arms.map(|a| a.delta_pos_um.map(|u| f64::from(u) * 1e-6));
        if let Some(v) = inj.fire(Site::NetworkPosition) {
            dpos = [[v; 3]; 2];
        }
        let mut dquat = pkt.arms.map(|a| a.orientation_quat());
        if let Some(v) = inj.fire(Site::NetworkOrientation) {
            dquat = [Quat::new(v, v, v, v); 2];
        }
        let pedal = inj.fire(Site::NetworkPedal).unwrap_or(f64::from(u8::from(pkt.pedal)));
        self.state.pedal = pedal != 0.0;

        if self.state.sw_state == RunLevel::PedalDown && self.state.pedal {
            for a in 0..2 {
                self.state.desired_pos[a] = add(self.state.desired_pos[a], dpos[a]);
                self.state.desired_quat[a] = self.state.desired_quat[a].mul(&dquat[a]);
            }
        }
        PacketOutcome::Accepted
    }

    fn homing_step(&mut self, tick: u64) {
        let cfg = &self.cfg;
        let st = &mut self.state;
        let dt = cfg.dt;
        for a in 0..2 {
            let h = &mut st.homing.arms[a];
            if h.homed_tick.is_some() {
                st.desired_joints[a] = h.ramp;
                continue;
            }
            let target = match h.leg {
                HomingLeg::ToRest => cfg.q_rest,
                HomingLeg::ToHome => cfg.q_home,
            };
            for j in 0..JOINTS {
                let step = cfg.homing_rate[j] * dt;
                h.ramp[j] += (target[j] - h.ramp[j]).clamp(-step, step);
            }
            let eps = cfg.homing_tolerance;
            let settled = (0..JOINTS).all(|j| {
                (st.est_q[a][j] - target[j]).abs() < eps && st.est_v[a][j].abs() < eps
            });
            if h.ramp == target && settled {
                match h.leg {
                    HomingLeg::ToRest => h.leg = HomingLeg::ToHome,
                    HomingLeg::ToHome => h.homed_tick = Some(tick),
                }
            }
            st.desired_joints[a] = h.ramp;
        }
        let homed = st.homing.arms.map(|h| h.homed_tick);
        match homed {
            [Some(_), Some(_)] => {
                st.sw_state = RunLevel::PedalUp;
                st.homing.completed_tick = Some(tick);
            }
            [Some(t), None] | [None, Some(t)] if tick - t > cfg.homing_sync_window => {
                self.begin_homing(true);
            }
            _ => {}
        }
    }

    fn ik_step(&mut self) -> [bool; 2] {
        let mut failed = [false; 2];
        for side in Side::ALL {
            let a = side.index();
            let st = &mut self.state;
            match inverse_kinematics(
                &self.kin,
                side,
                st.desired_pos[a],
                st.desired_quat[a],
                st.desired_joints[a][ROLL],
                self.cfg.quat_norm_tolerance,
            ) {
                Ok(q) => st.desired_joints[a] = q,
                Err(_) => failed[a] = true,
            }
        }
        failed
    }

    fn pd_control(&self) -> [Joints; 2] {
        let st = &self.state;
        if !matches!(st.sw_state, RunLevel::Init | RunLevel::PedalDown) {
            return [[0.0; JOINTS]; 2];
        }
        let mut out = [[0.0; JOINTS]; 2];
        for a in 0..2 {
            for j in 0..JOINTS {
                out[a][j] = self.cfg.kp[j] * (st.desired_joints[a][j] - st.est_q[a][j])
                    - self.cfg.kd[j] * st.est_v[a][j];
            }
        }
        out
    }

    fn overdrive_detect(&mut self, currents: [Joints; 2]) -> ([Joints; 2], bool) {
        let hard = self.cfg.i_hard;
        let over = currents
            .iter()
            .flatten()
            .any(|i| i.is_nan() || i.abs() > hard);
        if over {
            self.state.sw_state = RunLevel::EStop;
            self.state.overdrive_latched = true;
            self.state.watchdog_enabled = false;
            return ([[0.0; JOINTS]; 2], true);
        }
        let soft = self.cfg.i_soft;
        (currents.map(|arm| arm.map(|i| i.clamp(-soft, soft))), false)
    }

    fn update_atmel_outputs(&mut self, tick: u64, inj: &mut Injector<'_>) -> u32 {
        let st = &mut self.state;
        if matches!(self.kill_watchdog_at, Some(t) if tick > t) {
            st.watchdog_enabled = false;
        }
        if st.watchdog_enabled {
            st.watchdog_bit = !st.watchdog_bit;
        }
        let mut word = 0;
        if st.watchdog_bit {
            word |= bits::WATCHDOG;
        }
        match st.sw_state {
            RunLevel::PedalDown => word |= bits::PEDAL | bits::HOMED,
            RunLevel::PedalUp => word |= bits::HOMED,
            RunLevel::Init => word |= bits::INIT_REQUEST,
            RunLevel::EStop => {}
        }
        match inj.fire(Site::AtmelOutputWord) {
            Some(v) if v.is_finite() => v.round().clamp(0.0, u32::MAX as f64) as u32,
            Some(_) => 0,
            None => word,
        }
    }
}
