//! Run orchestration: golden runs, single injected runs, whole campaigns
//! with persistence and resume.

mod record;
mod report;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::injection::{HookRegistry, InjectionError, ScenarioRecord};
use crate::monitors::{
    classify_outcome, compare_golden, evaluate_uca, format_labels, Classification, OutcomeLabel, Trace,
    TraceEvent,
};
use crate::plc::RunLevel;
use crate::session::SessionPhase;
use crate::world::{SimConfig, SimWorld, Trajectory};

pub use record::{
    parse_run_record, read_records_dir, read_run_record, write_run_record, RecordError, RunRecord,
    RECORD_FORMAT_VERSION,
};
pub use report::{report, CampaignReport, ScenarioSummary};

pub const DEFAULT_RUNS: u32 = 8;

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("GOLDEN_FAILED: {0}")]
    GoldenFailed(String),
    #[error(transparent)]
    Injection(#[from] InjectionError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("CONFIG_MISMATCH: records carry {} distinct config digests: {}", .0.len(), .0.join(", "))]
    ConfigMismatch(Vec<String>),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("I/O error: {0}")]
    Io(String),
}

/// Fault-free reference run.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldenRun {
    pub trajectory_id: String,
    pub digest: String,
    pub trace: Trace,
    /// Tick at which homing completed.
    pub homing_tick: u64,
    pub phase_ranges: BTreeMap<SessionPhase, std::ops::Range<u64>>,
}

fn golden_cache() -> &'static Mutex<HashMap<String, Arc<GoldenRun>>> {
    static CACHE: OnceLock<Mutex<HashMap<String, Arc<GoldenRun>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Runs the session without faults, cached by configuration digest.
pub fn golden_run(traj: &Trajectory, cfg: &SimConfig) -> Result<Arc<GoldenRun>, CampaignError> {
    let digest = cfg.digest(&traj.id);
    if let Some(g) = golden_cache().lock().unwrap().get(&digest) {
        return Ok(Arc::clone(g));
    }
    let g = Arc::new(simulate_golden(traj, cfg, digest.clone())?);
    golden_cache().lock().unwrap().insert(digest, Arc::clone(&g));
    Ok(g)
}

fn simulate_golden(traj: &Trajectory, cfg: &SimConfig, digest: String) -> Result<GoldenRun, CampaignError> {
    let mut world = SimWorld::new(cfg.clone(), traj, HookRegistry::empty(), true);
    world.run_to_end();
    let trace = world.take_trace().expect("recording enabled");
    let fail = |msg: String| Err(CampaignError::GoldenFailed(msg));

    let Some(homing_tick) = trace.homing_complete_tick() else {
        return fail("homing never completed".into());
    };
    if homing_tick >= cfg.session.homing_ticks {
        return fail(format!(
            "homing completed at tick {homing_tick}, after the {}-tick budget",
            cfg.session.homing_ticks
        ));
    }
    if let Some(r) = trace.rows.iter().find(|r| r.events.contains(&TraceEvent::OverdriveEstop)) {
        return fail(format!("overdrive E-STOP at tick {}", r.tick));
    }
    let left_estop = trace.rows.iter().position(|r| r.plc_state != RunLevel::EStop);
    if let Some(i) = left_estop {
        if let Some(r) = trace.rows[i..].iter().find(|r| r.plc_state == RunLevel::EStop) {
            return fail(format!("PLC re-entered E_STOP at tick {}", r.tick));
        }
    }
    let ucas = evaluate_uca(&trace, &cfg.plant, &cfg.thresholds);
    let c = classify_outcome(&trace, &trace, homing_tick, &ucas, &cfg.session, &cfg.thresholds);
    for phase in SessionPhase::ALL {
        let labels = c.labels(phase);
        if labels.len() != 1 || !labels.contains(&OutcomeLabel::NoImpact) {
            let first = ucas.first().map(|u| format!(" (first UCA {} at tick {})", u.kind.name(), u.start_tick));
            return fail(format!(
                "{} phase classified {}{}",
                phase.name(),
                format_labels(&labels),
                first.unwrap_or_default()
            ));
        }
    }
    let phase_ranges = SessionPhase::ALL
        .into_iter()
        .map(|p| (p, cfg.session.phase_range(p)))
        .collect();
    Ok(GoldenRun {
        trajectory_id: traj.id.clone(),
        digest,
        trace,
        homing_tick,
        phase_ranges,
    })
}

/// Per-run seed: the base seed mixed with a hash of `"<id>#<index>"`.
pub fn run_seed(base_seed: u64, scenario_id: &str, run_index: u32) -> u64 {
    let h = Sha256::digest(format!("{scenario_id}#{run_index}").as_bytes());
    let mut b = [0u8; 8];
    b.copy_from_slice(&h[..8]);
    base_seed ^ u64::from_be_bytes(b)
}

/// Result of one injected run, with its trace when recording was asked for.
pub struct RunOutcome {
    pub record: RunRecord,
    pub classification: Classification,
    pub trace: Option<Trace>,
}

fn event_kind(tag: &str) -> &str {
    tag.split('(').next().unwrap_or(tag)
}

/// Ticks where the brake flag disagrees with the PLC state, or where the
/// brakes were reported engaged yet a joint moved.
pub fn brake_state_violations(trace: &Trace) -> u64 {
    let mut n = 0;
    for (i, r) in trace.rows.iter().enumerate() {
        let moved = i > 0
            && (r.q != trace.rows[i - 1].q || r.v.iter().flatten().any(|v| *v != 0.0));
        if r.brakes != r.plc_state.brakes_engaged() || (r.brakes && moved) {
            n += 1;
        }
    }
    n
}

pub fn run_single(
    scenario: &ScenarioRecord,
    run_index: u32,
    seed: u64,
    traj: &Trajectory,
    cfg: &SimConfig,
    keep_trace: bool,
) -> Result<RunOutcome, CampaignError> {
    let golden = golden_run(traj, cfg)?;
    let started = Instant::now();
    let hooks = HookRegistry::arm(&scenario.faults, seed, &cfg.session)?;
    let mut world = SimWorld::new(cfg.clone(), traj, hooks, true);
    world.run_to_end();
    let final_sw_state = world.software.state.sw_state;
    let final_plc_state = world.plc_state();
    let trace = world.take_trace().expect("recording enabled");

    let th = &cfg.thresholds;
    let ucas = evaluate_uca(&trace, &cfg.plant, th);
    let class = classify_outcome(&trace, &golden.trace, golden.homing_tick, &ucas, &cfg.session, th);
    let deviation = compare_golden(&trace, &golden.trace, &cfg.session, th);

    let mut event_counts: BTreeMap<String, u64> = BTreeMap::new();
    for r in &trace.rows {
        for e in &r.events {
            *event_counts.entry(event_kind(&e.tag()).to_string()).or_default() += 1;
        }
    }
    let engagements = trace.rows.windows(2).filter(|w| !w[0].brakes && w[1].brakes).count() as u64;
    event_counts.insert("BRAKE_ENGAGE".into(), engagements);
    event_counts.insert(
        "HOMING_RESTART".into(),
        trace.rows.last().map_or(0, |r| u64::from(r.homing_restarts)),
    );

    let mut uca_counts: BTreeMap<String, u64> = BTreeMap::new();
    for u in &ucas {
        *uca_counts.entry(u.kind.name().to_string()).or_default() += 1;
    }

    let mut observed = BTreeMap::new();
    let mut matched = BTreeMap::new();
    let mut crossings = BTreeMap::new();
    let mut phase_ticks = BTreeMap::new();
    for phase in SessionPhase::ALL {
        let labels = class.labels(phase);
        let expected = scenario.expected_for(phase);
        matched.insert(phase, expected.is_subset(&labels));
        observed.insert(phase, labels);
        crossings.insert(phase, class.phases[&phase].crossings.clone());
        let range = cfg.session.phase_range(phase);
        phase_ticks.insert(phase, trace.rows.iter().filter(|r| range.contains(&r.tick)).count() as u64);
    }

    let record = RunRecord {
        format_version: RECORD_FORMAT_VERSION,
        scenario_id: scenario.id.clone(),
        family: scenario.family().to_string(),
        run_index,
        seed,
        config_digest: golden.digest.clone(),
        trajectory_id: traj.id.clone(),
        observed,
        expected: SessionPhase::ALL
            .into_iter()
            .map(|p| (p, scenario.expected_for(p)))
            .collect(),
        matched,
        crossings,
        deviation,
        event_counts,
        uca_counts,
        first_uca_tick: ucas.iter().map(|u| u.start_tick).min(),
        first_hazard_tick: class.first_hazard_tick(),
        injected_ticks: trace.rows.iter().filter(|r| r.injected != 0).count() as u64,
        homing_complete_tick: trace.homing_complete_tick(),
        estop_latch_tick: class.estop_latch_tick,
        brake_state_violations: brake_state_violations(&trace),
        final_sw_state,
        final_plc_state,
        phase_ticks,
        wall_clock_ms: started.elapsed().as_millis() as u64,
    };
    Ok(RunOutcome {
        record,
        classification: class,
        trace: keep_trace.then_some(trace),
    })
}

#[derive(Debug, Clone)]
pub struct CampaignConfig {
    pub library: Vec<ScenarioRecord>,
    /// Forces the run count for every scenario when set.
    pub runs: Option<u32>,
    pub base_seed: u64,
    pub trajectory: Trajectory,
    pub sim: SimConfig,
    pub out_dir: PathBuf,
    pub resume: bool,
    pub jobs: usize,
    /// Also write a trace CSV next to each record.
    pub write_traces: bool,
}

impl CampaignConfig {
    pub fn runs_for(&self, s: &ScenarioRecord) -> u32 {
        self.runs.or(s.runs).unwrap_or(DEFAULT_RUNS)
    }

    /// Every `(scenario index, run index)` pair in execution order.
    pub fn plan(&self) -> Vec<(usize, u32)> {
        self.library
            .iter()
            .enumerate()
            .flat_map(|(i, s)| (0..self.runs_for(s)).map(move |k| (i, k)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignSummary {
    pub records: Vec<RunRecord>,
    pub simulated: usize,
    pub skipped: usize,
}

pub fn trace_file_name(scenario_id: &str, run_index: u32) -> String {
    format!("{scenario_id}__{run_index:03}.trace.csv")
}

fn write_trace(dir: &Path, name: &str, trace: &Trace) -> Result<(), CampaignError> {
    let tmp = dir.join(format!(".{name}.tmp"));
    let io = |e: std::io::Error| CampaignError::Io(format!("{}: {e}", tmp.display()));
    std::fs::write(&tmp, trace.to_csv()).map_err(io)?;
    std::fs::rename(&tmp, dir.join(name)).map_err(io)
}

/// Executes every planned run not already on disk, then reads back the
/// whole record set.
pub fn run_campaign(cfg: &CampaignConfig) -> Result<CampaignSummary, CampaignError> {
    run_campaign_limited(cfg, None)
}

/// As [`run_campaign`], but stops after `limit` new simulations. Used to
/// emulate an interrupted campaign.
pub fn run_campaign_limited(cfg: &CampaignConfig, limit: Option<usize>) -> Result<CampaignSummary, CampaignError> {
    let dir = &cfg.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| CampaignError::Io(format!("{}: {e}", dir.display())))?;
    golden_run(&cfg.trajectory, &cfg.sim)?;
    let plan = cfg.plan();
    let mut todo: Vec<(usize, u32)> = plan
        .iter()
        .copied()
        .filter(|&(i, k)| !(cfg.resume && dir.join(RunRecord::file_name(&cfg.library[i].id, k)).exists()))
        .collect();
    let skipped = plan.len() - todo.len();
    if let Some(n) = limit {
        todo.truncate(n);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| CampaignError::Io(e.to_string()))?;
    pool.install(|| {
        todo.par_iter().try_for_each(|&(i, k)| -> Result<(), CampaignError> {
            let s = &cfg.library[i];
            let seed = run_seed(cfg.base_seed, &s.id, k);
            let out = run_single(s, k, seed, &cfg.trajectory, &cfg.sim, cfg.write_traces)?;
            if let Some(t) = &out.trace {
                write_trace(dir, &trace_file_name(&s.id, k), t)?;
            }
            write_run_record(dir, &out.record)?;
            Ok(())
        })
    })?;
    let wanted: std::collections::BTreeSet<String> = plan
        .iter()
        .map(|&(i, k)| RunRecord::file_name(&cfg.library[i].id, k))
        .collect();
    let records = read_records_dir(dir)?
        .into_iter()
        .filter(|r| wanted.contains(&RunRecord::file_name(&r.scenario_id, r.run_index)))
        .collect();
    Ok(CampaignSummary {
        records,
        simulated: todo.len(),
        skipped,
    })
}

/// End-effector tracking of the golden run against the trajectory
/// reference: `(rms, max)` error in metres over covered teleop ticks, and
/// the largest single-tick end-effector displacement over the whole run.
pub fn golden_tracking(golden: &GoldenRun, traj: &Trajectory, cfg: &SimConfig) -> (f64, f64, f64) {
    let (mut sq, mut n, mut max_err) = (0.0, 0u64, 0.0f64);
    for r in &golden.trace.rows {
        if let Some(refs) = traj.reference_at(&cfg.session, r.tick) {
            for a in 0..2 {
                let e = crate::geometry::dist(r.ee[a].pos, refs[a]);
                sq += e * e;
                max_err = max_err.max(e);
                n += 1;
            }
        }
    }
    let rms = if n == 0 { f64::NAN } else { (sq / n as f64).sqrt() };
    let max_step = golden
        .trace
        .rows
        .windows(2)
        .flat_map(|w| (0..2).map(move |a| crate::geometry::dist(w[0].ee[a].pos, w[1].ee[a].pos)))
        .fold(0.0, f64::max);
    (rms, max_err, max_step)
}
