//! Safety PLC: watchdog timer, run-level mirror and brake command.

use serde::{Deserialize, Serialize};

/// Run level shared by the control software and the PLC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RunLevel {
    EStop,
    Init,
    PedalUp,
    PedalDown,
}

impl RunLevel {
    pub const ALL: [RunLevel; 4] = [
        RunLevel::EStop,
        RunLevel::Init,
        RunLevel::PedalUp,
        RunLevel::PedalDown,
    ];

    pub fn code(self) -> u8 {
        match self {
            RunLevel::EStop => 0,
            RunLevel::Init => 1,
            RunLevel::PedalUp => 2,
            RunLevel::PedalDown => 3,
        }
    }

    /// Decodes a raw state word. Anything unrecognised reads as E-STOP.
    pub fn from_code(c: i64) -> Self {
        match c {
            1 => RunLevel::Init,
            2 => RunLevel::PedalUp,
            3 => RunLevel::PedalDown,
            _ => RunLevel::EStop,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RunLevel::EStop => "E_STOP",
            RunLevel::Init => "INIT",
            RunLevel::PedalUp => "PEDAL_UP",
            RunLevel::PedalDown => "PEDAL_DOWN",
        }
    }

    pub fn brakes_engaged(self) -> bool {
        matches!(self, RunLevel::EStop | RunLevel::PedalUp)
    }
}

/// Bits of the software-to-PLC output word.
pub mod bits {
    pub const WATCHDOG: u32 = 1 << 0;
    pub const PEDAL: u32 = 1 << 1;
    pub const INIT_REQUEST: u32 = 1 << 2;
    pub const HOMED: u32 = 1 << 3;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlcConfig {
    /// Ticks without a watchdog edge before the PLC latches E-STOP.
    pub watchdog_timeout: u64,
}

impl Default for PlcConfig {
    fn default() -> Self {
        PlcConfig { watchdog_timeout: 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlcState {
    pub state: RunLevel,
    pub watchdog_last_change: u64,
    pub brakes_engaged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plc {
    cfg: PlcConfig,
    state: RunLevel,
    last_bit: bool,
    last_change: u64,
    start_pending: bool,
    estop_pending: bool,
}

impl Plc {
    pub fn new(cfg: PlcConfig) -> Self {
        Plc {
            cfg,
            state: RunLevel::EStop,
            last_bit: false,
            last_change: 0,
            start_pending: false,
            estop_pending: false,
        }
    }

    pub fn state(&self) -> RunLevel {
        self.state
    }

    pub fn snapshot(&self) -> PlcState {
        PlcState {
            state: self.state,
            watchdog_last_change: self.last_change,
            brakes_engaged: self.state.brakes_engaged(),
        }
    }

    /// Queues a start-button press for the next tick.
    pub fn press_start(&mut self) {
        self.start_pending = true;
    }

    /// Queues an E-stop press for the next tick.
    pub fn press_estop(&mut self) {
        self.estop_pending = true;
    }

    pub fn tick(&mut self, word: u32, tick: u64) -> PlcState {
        let start = std::mem::take(&mut self.start_pending);
        let estop = std::mem::take(&mut self.estop_pending);
        let bit = word & bits::WATCHDOG != 0;
        if bit != self.last_bit {
            self.last_bit = bit;
            self.last_change = tick;
        }
        let alive = tick.saturating_sub(self.last_change) < self.cfg.watchdog_timeout;
        let pedal = word & bits::PEDAL != 0;
        let init_req = word & bits::INIT_REQUEST != 0;
        let homed = word & bits::HOMED != 0;
        self.state = if estop || !alive {
            RunLevel::EStop
        } else {
            match self.state {
                RunLevel::EStop if start => RunLevel::Init,
                RunLevel::Init if !init_req && homed => RunLevel::PedalUp,
                RunLevel::PedalUp if pedal => RunLevel::PedalDown,
                RunLevel::PedalDown if !pedal => RunLevel::PedalUp,
                s => s,
            }
        };
        self.snapshot()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Feeds a toggling watchdog with extra bits for `n` ticks.
    fn run(plc: &mut Plc, from: u64, n: u64, extra: u32) -> PlcState {
        let mut s = plc.snapshot();
        for t in from..from + n {
            let wd = if t % 2 == 0 { bits::WATCHDOG } else { 0 };
            s = plc.tick(wd | extra, t);
        }
        s
    }

    #[test]
    fn start_requires_press() {
        let mut plc = Plc::new(PlcConfig::default());
        assert_eq!(run(&mut plc, 0, 5, 0).state, RunLevel::EStop);
        plc.press_start();
        let s = run(&mut plc, 5, 1, 0);
        assert_eq!(s.state, RunLevel::Init);
        assert!(!s.brakes_engaged);
    }

    #[test]
    fn pedal_cycle_and_brakes() {
        let mut plc = Plc::new(PlcConfig::default());
        plc.press_start();
        run(&mut plc, 0, 1, 0);
        assert_eq!(run(&mut plc, 1, 1, bits::HOMED).state, RunLevel::PedalUp);
        assert_eq!(run(&mut plc, 2, 1, bits::HOMED | bits::PEDAL).state, RunLevel::PedalDown);
        let s = run(&mut plc, 3, 1, bits::HOMED);
        assert_eq!(s.state, RunLevel::PedalUp);
        assert!(s.brakes_engaged);
    }

    #[test]
    fn homed_with_init_request_stays_init() {
        let mut plc = Plc::new(PlcConfig::default());
        plc.press_start();
        run(&mut plc, 0, 1, 0);
        assert_eq!(run(&mut plc, 1, 4, bits::HOMED | bits::INIT_REQUEST).state, RunLevel::Init);
    }

    #[test]
    fn watchdog_latency_is_exact() {
        let mut plc = Plc::new(PlcConfig::default());
        plc.press_start();
        run(&mut plc, 0, 10, 0);
        // last edge at tick 9 (bit went low); hold it low
        assert_eq!(plc.tick(0, 10).state, RunLevel::Init);
        assert_eq!(plc.tick(0, 11).state, RunLevel::Init);
        assert_eq!(plc.tick(0, 12).state, RunLevel::EStop);
        assert_eq!(plc.snapshot().watchdog_last_change, 9);
    }

    #[test]
    fn estop_is_latched_and_beats_start() {
        let mut plc = Plc::new(PlcConfig::default());
        plc.press_start();
        run(&mut plc, 0, 3, 0);
        plc.press_start();
        plc.press_estop();
        assert_eq!(run(&mut plc, 3, 1, 0).state, RunLevel::EStop);
        assert_eq!(run(&mut plc, 4, 20, bits::HOMED).state, RunLevel::EStop);
    }

    #[test]
    fn start_ignored_outside_estop() {
        let mut plc = Plc::new(PlcConfig::default());
        plc.press_start();
        run(&mut plc, 0, 1, 0);
        run(&mut plc, 1, 1, bits::HOMED);
        run(&mut plc, 2, 1, bits::HOMED | bits::PEDAL);
        plc.press_start();
        assert_eq!(run(&mut plc, 3, 1, bits::HOMED | bits::PEDAL).state, RunLevel::PedalDown);
    }
}
