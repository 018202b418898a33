use std::collections::BTreeSet;
use std::sync::Arc;

use telesim::campaign::{golden_run, GoldenRun};
use telesim::geometry::Side;
use telesim::itp::TrajectoryShape;
use telesim::monitors::{
    classify_outcome, evaluate_uca, format_labels, Classification, OutcomeLabel, Trace, TraceEvent, UcaKind,
};
use telesim::plant::PlantEventKind;
use telesim::plc::RunLevel;
use telesim::session::SessionPhase::{self, Homing, Teleop};
use telesim::world::{SimConfig, Trajectory};

fn golden() -> (Arc<GoldenRun>, SimConfig) {
    let cfg = SimConfig::default();
    let traj = Trajectory::generated(TrajectoryShape::Circle, &cfg).unwrap();
    (golden_run(&traj, &cfg).unwrap(), cfg)
}

fn classify(g: &GoldenRun, cfg: &SimConfig, t: &Trace) -> Classification {
    let ucas = evaluate_uca(t, &cfg.plant, &cfg.thresholds);
    classify_outcome(t, &g.trace, g.homing_tick, &ucas, &cfg.session, &cfg.thresholds)
}

fn labels(v: &[OutcomeLabel]) -> BTreeSet<OutcomeLabel> {
    v.iter().copied().collect()
}

fn crossing(c: &Classification, phase: SessionPhase, l: OutcomeLabel) -> Option<u64> {
    c.phases[&phase].crossings.get(&l).copied()
}

#[test]
fn golden_is_clean() {
    let (g, cfg) = golden();
    assert!(evaluate_uca(&g.trace, &cfg.plant, &cfg.thresholds).is_empty());
    let c = classify(&g, &cfg, &g.trace);
    for p in SessionPhase::ALL {
        assert_eq!(c.labels(p), labels(&[OutcomeLabel::NoImpact]));
    }
    assert_eq!(c.first_hazard_tick(), None);
}

#[test]
fn cable_break_is_stress_in_its_phase_only() {
    let (g, cfg) = golden();
    let mut t = g.trace.clone();
    let at = cfg.session.teleop_start() + 1234;
    t.rows[at as usize].events.push(TraceEvent::Plant(PlantEventKind::CableBreak {
        side: Side::Left,
        joint: 1,
    }));
    let c = classify(&g, &cfg, &t);
    assert_eq!(c.labels(Homing), labels(&[OutcomeLabel::NoImpact]));
    assert!(c.labels(Teleop).contains(&OutcomeLabel::H2Stress));
    assert_eq!(crossing(&c, Teleop, OutcomeLabel::H2Stress), Some(at));
    assert_eq!(c.first_hazard_tick(), Some(at));
}

#[test]
fn single_tick_jump_is_position_hazard() {
    let (g, cfg) = golden();
    let mut t = g.trace.clone();
    let at = cfg.session.teleop_start() + 500;
    t.rows[at as usize].ee[1].pos[0] += 0.02;
    let c = classify(&g, &cfg, &t);
    assert_eq!(crossing(&c, Teleop, OutcomeLabel::H1Position), Some(at));
    assert_eq!(crossing(&c, Teleop, OutcomeLabel::H1Velocity), Some(at));
    assert_eq!(c.labels(Homing), labels(&[OutcomeLabel::NoImpact]));
}

#[test]
fn jump_just_under_threshold_is_not_flagged() {
    let (g, cfg) = golden();
    let mut t = g.trace.clone();
    let at = cfg.session.teleop_start() + 500;
    // Golden steps are well under a millimetre, so 3 mm on one tick stays
    // below the 5 mm jump threshold in both directions.
    t.rows[at as usize].ee[1].pos[0] += 0.003;
    let c = classify(&g, &cfg, &t);
    assert!(!c.labels(Teleop).contains(&OutcomeLabel::H1Position));
}

#[test]
fn truncated_trace_is_unavailable() {
    let (g, cfg) = golden();
    let mut t = g.trace.clone();
    let cut = cfg.session.teleop_start() + 7000;
    t.rows.truncate(cut as usize);
    let c = classify(&g, &cfg, &t);
    assert!(c.labels(Teleop).contains(&OutcomeLabel::H3Unavailable));
    assert_eq!(c.labels(Homing), labels(&[OutcomeLabel::NoImpact]));
}

#[test]
fn held_estop_latches_unavailability() {
    let (g, cfg) = golden();
    let mut t = g.trace.clone();
    let from = cfg.session.teleop_start() + 100;
    for r in &mut t.rows[from as usize..] {
        r.plc_state = RunLevel::EStop;
        r.brakes = true;
    }
    let c = classify(&g, &cfg, &t);
    let latch = from + cfg.thresholds.estop_latch_limit - 1;
    let h3 = crossing(&c, Teleop, OutcomeLabel::H3Unavailable).unwrap();
    assert!(h3 <= latch, "{h3} > {latch}");
}

#[test]
fn brake_cycling_is_stress() {
    let (g, cfg) = golden();
    let mut t = g.trace.clone();
    let base = cfg.session.teleop_start() as usize + 200;
    for k in 0..11 {
        t.rows[base + 100 * k].brakes = true;
    }
    let c = classify(&g, &cfg, &t);
    assert_eq!(crossing(&c, Teleop, OutcomeLabel::H2Stress), Some((base + 1000) as u64));

    let mut slow = g.trace.clone();
    for k in 0..11 {
        slow.rows[base + 600 * k].brakes = true;
    }
    let c = classify(&g, &cfg, &slow);
    assert_eq!(crossing(&c, Teleop, OutcomeLabel::H2Stress), None);
}

#[test]
fn overdrive_stop_before_any_hazard_is_mitigated() {
    let (g, cfg) = golden();
    let mut t = g.trace.clone();
    let at = cfg.session.teleop_start() as usize + 3000;
    t.rows[at].events.push(TraceEvent::OverdriveEstop);
    let frozen = t.rows[at].ee;
    for r in &mut t.rows[at + 1..] {
        r.sw_state = RunLevel::EStop;
        r.plc_state = RunLevel::EStop;
        r.believed_plc_state = RunLevel::EStop;
        r.brakes = true;
        r.ee = frozen;
        r.bus_words = [[0; 4]; 2];
        r.issued_words = [[0; 4]; 2];
    }
    let c = classify(&g, &cfg, &t);
    assert!(c.mitigated);
    assert_eq!(c.estop_latch_tick, Some(at as u64 + 1));
    assert_eq!(c.labels(Teleop), labels(&[OutcomeLabel::MitigatedEstop]));
    assert_eq!(c.labels(Homing), labels(&[OutcomeLabel::NoImpact]));
}

#[test]
fn hazard_before_overdrive_stop_is_not_mitigated() {
    let (g, cfg) = golden();
    let mut t = g.trace.clone();
    let at = cfg.session.teleop_start() as usize + 3000;
    t.rows[at - 10].events.push(TraceEvent::Plant(PlantEventKind::ArmArmCollision));
    t.rows[at].events.push(TraceEvent::OverdriveEstop);
    for r in &mut t.rows[at + 1..] {
        r.plc_state = RunLevel::EStop;
        r.sw_state = RunLevel::EStop;
        r.believed_plc_state = RunLevel::EStop;
    }
    let c = classify(&g, &cfg, &t);
    assert!(!c.mitigated);
    assert!(!c.labels(Teleop).contains(&OutcomeLabel::MitigatedEstop));
    assert!(c.labels(Teleop).contains(&OutcomeLabel::H2Stress));
}

fn quiet_rows(g: &GoldenRun, n: usize) -> Trace {
    let template = g
        .trace
        .rows
        .iter()
        .rev()
        .find(|r| r.sw_state == RunLevel::PedalDown && r.plc_state == RunLevel::PedalDown)
        .unwrap()
        .clone();
    let mut t = Trace::with_capacity(n);
    for k in 0..n {
        let mut r = template.clone();
        r.tick = k as u64;
        r.issued_words = [[0; 4]; 2];
        r.bus_words = [[0; 4]; 2];
        r.events.clear();
        t.rows.push(r);
    }
    t
}

fn kinds(cfg: &SimConfig, t: &Trace) -> Vec<(UcaKind, Option<Side>, u64, u64)> {
    evaluate_uca(t, &cfg.plant, &cfg.thresholds)
        .into_iter()
        .map(|u| (u.kind, u.side, u.start_tick, u.end_tick))
        .collect()
}

#[test]
fn quiet_template_raises_nothing() {
    let (g, cfg) = golden();
    assert!(kinds(&cfg, &quiet_rows(&g, 20)).is_empty());
}

#[test]
fn current_while_stopped() {
    let (g, cfg) = golden();
    let mut t = quiet_rows(&g, 20);
    for r in &mut t.rows {
        r.sw_state = RunLevel::PedalUp;
        r.plc_state = RunLevel::PedalUp;
        r.believed_plc_state = RunLevel::PedalUp;
        r.brakes = true;
    }
    for r in &mut t.rows[5..8] {
        r.bus_words[1][2] = 40;
    }
    assert_eq!(
        kinds(&cfg, &t),
        vec![(UcaKind::CommandWhileStopped, Some(Side::Right), 5, 7)]
    );
}

#[test]
fn altered_bus_word_is_command_not_followed() {
    let (g, cfg) = golden();
    let mut t = quiet_rows(&g, 20);
    t.rows[9].issued_words[0][0] = 12;
    t.rows[9].bus_words[0][0] = -12;
    assert_eq!(
        kinds(&cfg, &t),
        vec![(UcaKind::CommandNotFollowed, Some(Side::Left), 9, 9)]
    );
}

#[test]
fn stale_plc_reading_is_runlevel_mismatch() {
    let (g, cfg) = golden();
    let mut t = quiet_rows(&g, 20);
    t.rows[11].believed_plc_state = RunLevel::PedalUp;
    t.rows[12].believed_plc_state = RunLevel::PedalUp;
    assert_eq!(kinds(&cfg, &t), vec![(UcaKind::RunlevelMismatch, None, 11, 12)]);
}

#[test]
fn desired_joint_jump_and_pose_disagreement() {
    let (g, cfg) = golden();
    let mut t = quiet_rows(&g, 20);
    for r in &mut t.rows[10..] {
        r.desired_joints[0][0] += 0.1;
    }
    let got = kinds(&cfg, &t);
    // One tick of jump, then the desired pose no longer matches the joints.
    assert!(got.contains(&(UcaKind::UnintendedJump, Some(Side::Left), 10, 10)), "{got:?}");
    assert!(got.contains(&(UcaKind::IkInconsistent, Some(Side::Left), 10, 19)), "{got:?}");
    assert_eq!(got.len(), 2);
}

#[test]
fn arms_too_close_while_commanding() {
    let (g, cfg) = golden();
    let mut t = quiet_rows(&g, 20);
    for r in &mut t.rows[3..6] {
        r.ee[1].pos = r.ee[0].pos;
    }
    assert_eq!(kinds(&cfg, &t), vec![(UcaKind::ArmProximity, None, 3, 5)]);
}

#[test]
fn label_names_roundtrip() {
    for l in OutcomeLabel::ALL {
        assert_eq!(OutcomeLabel::parse(l.name()), Some(l));
    }
    assert_eq!(OutcomeLabel::parse("H4"), None);
    assert_eq!(format_labels(&BTreeSet::new()), "-");
    assert_eq!(
        format_labels(&labels(&[OutcomeLabel::H3Unavailable, OutcomeLabel::H1Position])),
        "H1_POSITION+H3_UNAVAILABLE"
    );
}
