//! Two 4-DOF arms: shoulder, elbow, insertion (prismatic) and tool roll.

use serde::{Deserialize, Serialize};

use crate::geometry::{dist, Side, Vec3};

pub const JOINTS: usize = 4;
pub const PRISMATIC: usize = 2;
pub const ROLL: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    pub link1: f64,
    pub link2: f64,
    /// N·m/A for revolute joints, N/A for the prismatic joint.
    pub torque_constant: f64,
    pub inertia: f64,
    pub damping: f64,
    pub cable_break_torque: f64,
    pub floor_z: f64,
    pub min_arm_distance: f64,
    pub left_base: Vec3,
    pub right_base: Vec3,
    /// `(min, max)` per joint; `None` means unbounded.
    pub joint_limits: [Option<(f64, f64)>; JOINTS],
    pub dt: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig {
            link1: 0.3,
            link2: 0.3,
            torque_constant: 0.05,
            inertia: 0.01,
            damping: 0.1,
            cable_break_torque: 5.0,
            floor_z: 0.0,
            min_arm_distance: 0.005,
            left_base: [-0.2, 0.0, 0.3],
            right_base: [0.2, 0.0, 0.3],
            joint_limits: [Some((-2.5, 2.5)), Some((-2.5, 2.5)), Some((0.0, 0.25)), None],
            dt: 0.001,
        }
    }
}

impl PlantConfig {
    pub fn base(&self, side: Side) -> Vec3 {
        match side {
            Side::Left => self.left_base,
            Side::Right => self.right_base,
        }
    }

    pub fn within_limits(&self, q: &[f64; JOINTS]) -> bool {
        q.iter().zip(self.joint_limits.iter()).all(|(v, lim)| match lim {
            Some((lo, hi)) => *lo <= *v && *v <= *hi,
            None => v.is_finite(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub q: f64,
    pub v: f64,
    pub applied_current: f64,
    pub cable_intact: bool,
}

impl JointState {
    pub fn at(q: f64) -> Self {
        JointState {
            q,
            v: 0.0,
            applied_current: 0.0,
            cable_intact: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmState {
    pub side: Side,
    pub joints: [JointState; JOINTS],
}

impl ArmState {
    pub fn at(side: Side, q: [f64; JOINTS]) -> Self {
        ArmState {
            side,
            joints: q.map(JointState::at),
        }
    }

    pub fn q(&self) -> [f64; JOINTS] {
        self.joints.map(|j| j.q)
    }

    pub fn v(&self) -> [f64; JOINTS] {
        self.joints.map(|j| j.v)
    }
}

/// End-effector pose: position in metres and tool roll in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub pos: Vec3,
    pub roll: f64,
}

pub fn forward_kinematics(cfg: &PlantConfig, side: Side, q: &[f64; JOINTS]) -> Pose {
    let b = cfg.base(side);
    let (s1, c1) = q[0].sin_cos();
    let (s12, c12) = (q[0] + q[1]).sin_cos();
    Pose {
        pos: [
            b[0] + cfg.link1 * c1 + cfg.link2 * c12,
            b[1] + cfg.link1 * s1 + cfg.link2 * s12,
            b[2] - q[PRISMATIC],
        ],
        roll: q[ROLL],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PlantEventKind {
    CableBreak { side: Side, joint: usize },
    FloorCollision { side: Side },
    ArmArmCollision,
    JointLimitHit { side: Side, joint: usize },
    NonFiniteCurrent { side: Side, joint: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantEvent {
    pub kind: PlantEventKind,
    pub tick: u64,
}

/// Geometric contact conditions for a pair of end-effector positions.
pub fn detect_collisions(cfg: &PlantConfig, ee: [Vec3; 2]) -> Vec<PlantEventKind> {
    let mut out = Vec::new();
    for side in Side::ALL {
        if ee[side.index()][2] < cfg.floor_z {
            out.push(PlantEventKind::FloorCollision { side });
        }
    }
    if dist(ee[0], ee[1]) < cfg.min_arm_distance {
        out.push(PlantEventKind::ArmArmCollision);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    pub cfg: PlantConfig,
    pub arms: [ArmState; 2],
    at_limit: [[bool; JOINTS]; 2],
    in_contact: Vec<PlantEventKind>,
}

impl Plant {
    pub fn new(cfg: PlantConfig, q0: [f64; JOINTS]) -> Self {
        Plant {
            cfg,
            arms: [ArmState::at(Side::Left, q0), ArmState::at(Side::Right, q0)],
            at_limit: [[false; JOINTS]; 2],
            in_contact: Vec::new(),
        }
    }

    pub fn ee(&self) -> [Pose; 2] {
        Side::ALL.map(|s| forward_kinematics(&self.cfg, s, &self.arms[s.index()].q()))
    }

    pub fn encoders(&self) -> [[f64; JOINTS]; 2] {
        [self.arms[0].q(), self.arms[1].q()]
    }

    /// Advances one tick.
    ///
    /// Besides the motor torque, a cable also carries the reaction of any
    /// abrupt stop on its joint (brake engagement or hard limit), `J·|Δv|/dt`.
    pub fn step(&mut self, currents: [[f64; JOINTS]; 2], brakes: bool, tick: u64) -> Vec<PlantEvent> {
        let cfg = &self.cfg;
        let dt = cfg.dt;
        let mut events = Vec::new();
        let mut push = |kind| events.push(PlantEvent { kind, tick });
        for (a, arm) in self.arms.iter_mut().enumerate() {
            let side = arm.side;
            for (j, js) in arm.joints.iter_mut().enumerate() {
                let mut i = currents[a][j];
                if !i.is_finite() {
                    push(PlantEventKind::NonFiniteCurrent { side, joint: j });
                    i = 0.0;
                }
                js.applied_current = i;
                let motor = if js.cable_intact { cfg.torque_constant * i } else { 0.0 };
                let v_before = js.v;
                let mut arrest = 0.0;
                let mut hit_limit = false;
                if brakes {
                    arrest = v_before.abs();
                    js.v = 0.0;
                } else {
                    js.v += (motor - cfg.damping * js.v) * dt / cfg.inertia;
                    js.q += js.v * dt;
                    if let Some((lo, hi)) = cfg.joint_limits[j] {
                        if js.q < lo || js.q > hi {
                            js.q = js.q.clamp(lo, hi);
                            arrest = js.v.abs();
                            js.v = 0.0;
                            hit_limit = true;
                        }
                    }
                }
                let load = motor.abs() + cfg.inertia * arrest / dt;
                if js.cable_intact && load > cfg.cable_break_torque {
                    js.cable_intact = false;
                    push(PlantEventKind::CableBreak { side, joint: j });
                }
                if hit_limit && !self.at_limit[a][j] {
                    push(PlantEventKind::JointLimitHit { side, joint: j });
                }
                if !brakes {
                    self.at_limit[a][j] = hit_limit;
                }
            }
        }
        let ee = Side::ALL.map(|s| forward_kinematics(cfg, s, &self.arms[s.index()].q()).pos);
        let contacts = detect_collisions(cfg, ee);
        for c in &contacts {
            if !self.in_contact.contains(c) {
                push(*c);
            }
        }
        self.in_contact = contacts;
        events
    }
}
