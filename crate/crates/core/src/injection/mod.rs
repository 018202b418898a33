//! Fault specifications, value sources, triggers and the per-run hook
//! registry consulted by the control pipeline.

mod library;

pub use library::{
    default_library, format_library, load_scenario_library, parse_library, ScenarioRecord,
    DEFAULT_LIBRARY,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::session::{SessionConfig, SessionPhase};

/// Interposition points in the control pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Site {
    NetworkPosition,
    NetworkOrientation,
    NetworkPedal,
    EstimatePosition,
    EstimateVelocity,
    TorqueToDac,
    PutUsbCurrents,
    GetUsbPlcState,
    GetUsbEncoders,
    AtmelOutputWord,
}

/// Valid-range metadata of the field behind a site.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldMeta {
    /// Symmetric magnitude bound (or upper bound for unsigned fields).
    pub bound: Option<f64>,
    pub integer: bool,
    pub signed: bool,
}

impl FieldMeta {
    pub fn is_valid(&self, v: f64) -> bool {
        match self.bound {
            Some(b) if self.signed => v.abs() <= b,
            Some(b) => (0.0..=b).contains(&v),
            None => v.is_finite(),
        }
    }
}

impl Site {
    pub const ALL: [Site; 10] = [
        Site::NetworkPosition,
        Site::NetworkOrientation,
        Site::NetworkPedal,
        Site::EstimatePosition,
        Site::EstimateVelocity,
        Site::TorqueToDac,
        Site::PutUsbCurrents,
        Site::GetUsbPlcState,
        Site::GetUsbEncoders,
        Site::AtmelOutputWord,
    ];

    pub fn index(self) -> usize {
        Site::ALL.iter().position(|s| *s == self).unwrap()
    }

    pub fn name(self) -> &'static str {
        match self {
            Site::NetworkPosition => "NETWORK_POSITION",
            Site::NetworkOrientation => "NETWORK_ORIENTATION",
            Site::NetworkPedal => "NETWORK_PEDAL",
            Site::EstimatePosition => "ESTIMATE_POSITION",
            Site::EstimateVelocity => "ESTIMATE_VELOCITY",
            Site::TorqueToDac => "TORQUE_TO_DAC",
            Site::PutUsbCurrents => "PUT_USB_CURRENTS",
            Site::GetUsbPlcState => "GET_USB_PLC_STATE",
            Site::GetUsbEncoders => "GET_USB_ENCODERS",
            Site::AtmelOutputWord => "ATMEL_OUTPUT_WORD",
        }
    }

    pub fn parse(s: &str) -> Option<Site> {
        Site::ALL.into_iter().find(|site| site.name() == s)
    }

    /// Position deltas are metres, orientation is quaternion components,
    /// estimates are joint units, DAC/bus words are counts.
    pub fn meta(self) -> FieldMeta {
        let signed = |b: f64| FieldMeta {
            bound: Some(b),
            integer: false,
            signed: true,
        };
        let unsigned_int = |b: f64| FieldMeta {
            bound: Some(b),
            integer: true,
            signed: false,
        };
        match self {
            Site::NetworkPosition => signed(0.6),
            Site::NetworkOrientation => signed(1.0),
            Site::NetworkPedal => unsigned_int(1.0),
            Site::EstimatePosition => signed(2.5),
            Site::EstimateVelocity => signed(10.0),
            Site::TorqueToDac | Site::PutUsbCurrents => FieldMeta {
                bound: Some(1000.0),
                integer: true,
                signed: true,
            },
            Site::GetUsbPlcState => unsigned_int(3.0),
            Site::GetUsbEncoders => signed(2.5),
            Site::AtmelOutputWord => unsigned_int(15.0),
        }
    }

    /// True for sites whose values enter the pipeline at or before the
    /// controller output (and therefore pass the overdrive check).
    pub fn upstream_of_overdrive(self) -> bool {
        !matches!(self, Site::TorqueToDac | Site::PutUsbCurrents | Site::AtmelOutputWord)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FaultKind {
    StuckAt,
    Intermittent { period: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ValueSource {
    Literal(f64),
    OutOfRange,
    /// Uniform over ten times the field bound; `None` draws from the run seed.
    Random { seed: Option<u64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TriggerPhase {
    Homing,
    Teleop,
    Always,
}

impl TriggerPhase {
    pub fn name(self) -> &'static str {
        match self {
            TriggerPhase::Homing => "HOMING",
            TriggerPhase::Teleop => "TELEOP",
            TriggerPhase::Always => "ALWAYS",
        }
    }

    pub fn matches(self, phase: SessionPhase) -> bool {
        match self {
            TriggerPhase::Always => true,
            TriggerPhase::Homing => phase == SessionPhase::Homing,
            TriggerPhase::Teleop => phase == SessionPhase::Teleop,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trigger {
    pub phase: TriggerPhase,
    /// Absolute first tick; defaults to the start of the trigger phase.
    pub start: Option<u64>,
    /// Absolute last tick (inclusive); open when absent.
    pub end: Option<u64>,
}

impl Trigger {
    pub fn always() -> Self {
        Trigger {
            phase: TriggerPhase::Always,
            start: None,
            end: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub site: Site,
    pub kind: FaultKind,
    pub value: ValueSource,
    pub trigger: Trigger,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InjectionError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: unknown site `{name}`")]
    UnknownSite { line: usize, name: String },
    #[error("line {line}: unknown outcome label `{name}`")]
    UnknownLabel { line: usize, name: String },
    #[error("more than one fault on site {0}")]
    DuplicateSite(&'static str),
    #[error("site {0} has no declared valid range")]
    NoRangeDeclared(&'static str),
    #[error("invalid fault on {site}: {msg}")]
    InvalidSpec { site: &'static str, msg: String },
    #[error("no scenario `{0}` in library")]
    UnknownScenario(String),
    #[error("cannot read library: {0}")]
    Io(String),
}

/// Draws a value strictly outside the field's valid range, with magnitude
/// between 1.5 and 10 times the bound.
pub fn sample_out_of_range(meta: &FieldMeta, rng: &mut impl Rng) -> Result<f64, InjectionError> {
    let b = meta.bound.ok_or(InjectionError::NoRangeDeclared("field"))?;
    let (lo, hi) = (1.5 * b, 10.0 * b);
    let mag = if meta.integer {
        let lo_i = (lo.ceil() as i64).max(b as i64 + 1);
        let hi_i = (hi.floor() as i64).max(lo_i);
        rng.gen_range(lo_i..=hi_i) as f64
    } else {
        rng.gen_range(lo..=hi)
    };
    let neg = meta.signed && rng.gen_bool(0.5);
    Ok(if neg { -mag } else { mag })
}

/// Draws uniformly from ten times the field range.
pub fn sample_random(meta: &FieldMeta, rng: &mut impl Rng) -> Result<f64, InjectionError> {
    let b = meta.bound.ok_or(InjectionError::NoRangeDeclared("field"))?;
    let hi = 10.0 * b;
    let lo = if meta.signed { -hi } else { 0.0 };
    let v = rng.gen_range(lo..=hi);
    Ok(if meta.integer { v.round() } else { v })
}

/// A fault with its value resolved for one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmedFault {
    pub spec: FaultSpec,
    pub value: f64,
    /// Resolved first tick of the trigger window.
    pub start: u64,
}

impl ArmedFault {
    pub fn active(&self, tick: u64, phase: SessionPhase) -> bool {
        if !self.spec.trigger.phase.matches(phase) || tick < self.start {
            return false;
        }
        if matches!(self.spec.trigger.end, Some(end) if tick > end) {
            return false;
        }
        match self.spec.kind {
            FaultKind::StuckAt => true,
            FaultKind::Intermittent { period } => (tick - self.start).is_multiple_of(period.max(1)),
        }
    }

    pub fn apply(&self, original: f64, tick: u64, phase: SessionPhase) -> f64 {
        if self.active(tick, phase) {
            self.value
        } else {
            original
        }
    }
}

fn site_seed(seed: u64, site: Site) -> u64 {
    seed ^ (site.index() as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn arm_fault(spec: &FaultSpec, seed: u64, session: &SessionConfig) -> Result<ArmedFault, InjectionError> {
    let meta = spec.site.meta();
    let no_range = || InjectionError::NoRangeDeclared(spec.site.name());
    if let FaultKind::Intermittent { period: 0 } = spec.kind {
        return Err(InjectionError::InvalidSpec {
            site: spec.site.name(),
            msg: "period must be at least 1".into(),
        });
    }
    let value = match spec.value {
        ValueSource::Literal(v) => v,
        ValueSource::OutOfRange => {
            let mut rng = ChaCha8Rng::seed_from_u64(site_seed(seed, spec.site));
            sample_out_of_range(&meta, &mut rng).map_err(|_| no_range())?
        }
        ValueSource::Random { seed: explicit } => {
            let mut rng = ChaCha8Rng::seed_from_u64(explicit.unwrap_or(site_seed(seed, spec.site)));
            sample_random(&meta, &mut rng).map_err(|_| no_range())?
        }
    };
    let start = spec.trigger.start.unwrap_or(match spec.trigger.phase {
        TriggerPhase::Teleop => session.teleop_start(),
        TriggerPhase::Homing | TriggerPhase::Always => 0,
    });
    if let Some(end) = spec.trigger.end {
        if end < start {
            return Err(InjectionError::InvalidSpec {
                site: spec.site.name(),
                msg: format!("end {end} precedes start {start}"),
            });
        }
    }
    Ok(ArmedFault {
        spec: *spec,
        value,
        start,
    })
}

/// At most one armed fault per site.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HookRegistry {
    slots: [Option<ArmedFault>; 10],
}

impl HookRegistry {
    pub fn empty() -> Self {
        HookRegistry::default()
    }

    pub fn arm(specs: &[FaultSpec], seed: u64, session: &SessionConfig) -> Result<Self, InjectionError> {
        let mut reg = HookRegistry::empty();
        for spec in specs {
            let slot = &mut reg.slots[spec.site.index()];
            if slot.is_some() {
                return Err(InjectionError::DuplicateSite(spec.site.name()));
            }
            *slot = Some(arm_fault(spec, seed, session)?);
        }
        Ok(reg)
    }

    pub fn len(&self) -> usize {
        self.slots.iter().flatten().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, site: Site) -> Option<&ArmedFault> {
        self.slots[site.index()].as_ref()
    }

    pub fn armed(&self) -> impl Iterator<Item = &ArmedFault> {
        self.slots.iter().flatten()
    }

    /// The substitute value if the fault on `site` fires this tick.
    pub fn fire(&self, site: Site, tick: u64, phase: SessionPhase) -> Option<f64> {
        self.get(site)
            .filter(|f| f.active(tick, phase))
            .map(|f| f.value)
    }
}
