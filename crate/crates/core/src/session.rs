//! Session timing: the homing window followed by the teleoperation window.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SessionPhase {
    Homing,
    Teleop,
}

impl SessionPhase {
    pub const ALL: [SessionPhase; 2] = [SessionPhase::Homing, SessionPhase::Teleop];

    pub fn name(self) -> &'static str {
        match self {
            SessionPhase::Homing => "homing",
            SessionPhase::Teleop => "teleop",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub homing_ticks: u64,
    pub teleop_ticks: u64,
    pub packet_period_ms: u64,
    /// Amplitude of generated trajectories, metres.
    pub amplitude_m: f64,
    /// Tick at which the start button is pressed (consumed by the PLC on the
    /// following tick).
    pub start_press_tick: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            homing_ticks: 10_000,
            teleop_ticks: 20_000,
            packet_period_ms: 1,
            amplitude_m: 0.03,
            start_press_tick: 0,
        }
    }
}

impl SessionConfig {
    pub fn total_ticks(&self) -> u64 {
        self.homing_ticks + self.teleop_ticks
    }

    pub fn teleop_start(&self) -> u64 {
        self.homing_ticks
    }

    pub fn phase_of(&self, tick: u64) -> SessionPhase {
        if tick < self.homing_ticks {
            SessionPhase::Homing
        } else {
            SessionPhase::Teleop
        }
    }

    pub fn phase_range(&self, phase: SessionPhase) -> std::ops::Range<u64> {
        match phase {
            SessionPhase::Homing => 0..self.homing_ticks,
            SessionPhase::Teleop => self.homing_ticks..self.total_ticks(),
        }
    }
}
