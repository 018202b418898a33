use std::collections::BTreeSet;
use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use telesim::campaign::{golden_run, GoldenRun};
use telesim::control::inverse_kinematics;
use telesim::geometry::{Quat, Side};
use telesim::injection::{arm_fault, sample_out_of_range, FaultKind, FaultSpec, Site, Trigger, ValueSource};
use telesim::itp::{decode_packet, encode_packet, ArmCommand, ConsolePacket, Mode, TrajectoryShape};
use telesim::monitors::{classify_outcome, evaluate_uca, Classification, OutcomeLabel, Trace};
use telesim::plant::{forward_kinematics, Plant, PlantConfig};
use telesim::session::{SessionConfig, SessionPhase};
use telesim::world::{SimConfig, Trajectory};

fn golden() -> (Arc<GoldenRun>, SimConfig) {
    let cfg = SimConfig::default();
    let traj = Trajectory::generated(TrajectoryShape::Circle, &cfg).unwrap();
    (golden_run(&traj, &cfg).unwrap(), cfg)
}

fn unit_quat() -> impl Strategy<Value = Quat> {
    prop::array::uniform4(-1.0f64..1.0)
        .prop_filter("not degenerate", |c| c.iter().map(|x| x * x).sum::<f64>() > 0.01)
        .prop_map(|c| {
            let n = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            Quat::from_components(c.map(|x| x / n))
        })
}

fn arm_command() -> impl Strategy<Value = ArmCommand> {
    (any::<[i32; 3]>(), unit_quat(), any::<i32>()).prop_map(|(d, q, g)| ArmCommand {
        delta_pos_um: d,
        orientation: q.to_fixed(),
        grasp_mdeg: g,
    })
}

fn packet() -> impl Strategy<Value = ConsolePacket> {
    (any::<u32>(), any::<bool>(), arm_command(), arm_command()).prop_map(|(sequence, pedal, l, r)| ConsolePacket {
        sequence,
        pedal,
        mode: Mode::Cartesian,
        arms: [l, r],
    })
}

/// Displaces one arm's end effector by `dx` over `len` ticks from `start`.
fn perturbed(golden: &Trace, start: usize, len: usize, arm: usize, dx: f64) -> Trace {
    let mut t = golden.clone();
    for r in t.rows.iter_mut().skip(start).take(len) {
        r.ee[arm].pos[0] += dx;
    }
    t
}

fn classify(g: &GoldenRun, cfg: &SimConfig, t: &Trace) -> Classification {
    let ucas = evaluate_uca(t, &cfg.plant, &cfg.thresholds);
    classify_outcome(t, &g.trace, g.homing_tick, &ucas, &cfg.session, &cfg.thresholds)
}

proptest! {
    #[test]
    fn codec_roundtrip(p in packet()) {
        prop_assert_eq!(decode_packet(&encode_packet(&p)), Ok(p));
    }

    #[test]
    fn ik_inverts_fk(
        right in any::<bool>(),
        q1 in -2.5f64..2.5,
        q2 in 0.05f64..2.5,
        q3 in 0.0f64..0.25,
        q4 in -3.1f64..3.1,
    ) {
        let kin = PlantConfig::default();
        let side = if right { Side::Right } else { Side::Left };
        let q = [q1, q2, q3, q4];
        let pose = forward_kinematics(&kin, side, &q);
        let back = inverse_kinematics(&kin, side, pose.pos, Quat::from_yaw(pose.roll), q4, 1e-3).unwrap();
        for (a, b) in q.iter().zip(back.iter()) {
            prop_assert!((a - b).abs() <= 1e-9, "{:?} vs {:?}", q, back);
        }
    }

    #[test]
    fn brakes_hold_position(
        q in prop::array::uniform4(0.0f64..0.2),
        v in prop::array::uniform4(-0.3f64..0.3),
        i in prop::array::uniform4(-10.0f64..10.0),
    ) {
        let mut p = Plant::new(PlantConfig::default(), [0.0, 1.0, 0.1, 0.0]);
        for (j, js) in p.arms[0].joints.iter_mut().enumerate() {
            js.q = q[j];
            js.v = v[j];
        }
        let before = p.arms[0].q();
        p.step([i, i], true, 0);
        prop_assert_eq!(p.arms[0].q(), before);
        prop_assert_eq!(p.arms[0].v(), [0.0; 4]);
    }

    #[test]
    fn damping_alone_never_speeds_up(v0 in -2.0f64..2.0, steps in 1usize..200) {
        let mut p = Plant::new(PlantConfig::default(), [0.0, 1.0, 0.1, 0.0]);
        p.arms[1].joints[3].v = v0;
        let mut last = v0.abs();
        for t in 0..steps {
            p.step([[0.0; 4]; 2], false, t as u64);
            let now = p.arms[1].joints[3].v.abs();
            prop_assert!(now <= last);
            last = now;
        }
    }

    #[test]
    fn period_one_equals_stuck_at(
        site_idx in 0usize..Site::ALL.len(),
        value in -50.0f64..50.0,
        seed in any::<u64>(),
        ticks in prop::collection::vec(0u64..30_000, 1..50),
    ) {
        let session = SessionConfig::default();
        let site = Site::ALL[site_idx];
        let spec = |kind| FaultSpec { site, kind, value: ValueSource::Literal(value.round()), trigger: Trigger::always() };
        let stuck = arm_fault(&spec(FaultKind::StuckAt), seed, &session).unwrap();
        let every = arm_fault(&spec(FaultKind::Intermittent { period: 1 }), seed, &session).unwrap();
        for t in ticks {
            let phase = session.phase_of(t);
            prop_assert_eq!(stuck.apply(0.25, t, phase), every.apply(0.25, t, phase));
        }
    }

    #[test]
    fn out_of_range_is_invalid(site_idx in 0usize..Site::ALL.len(), seed in any::<u64>()) {
        let meta = Site::ALL[site_idx].meta();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match sample_out_of_range(&meta, &mut rng) {
            Ok(v) => prop_assert!(!meta.is_valid(v), "{} accepted {}", Site::ALL[site_idx].name(), v),
            Err(_) => prop_assert!(meta.bound.is_none()),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn classification_is_pure(start in 100usize..29_000, len in 1usize..400, arm in 0usize..2, dx in -0.03f64..0.03) {
        let (g, cfg) = golden();
        let t = perturbed(&g.trace, start, len, arm, dx);
        prop_assert_eq!(classify(&g, &cfg, &t), classify(&g, &cfg, &t.clone()));
    }

    #[test]
    fn raising_jump_threshold_never_adds_position_hazards(
        start in 3_000usize..29_000,
        len in 1usize..20,
        arm in 0usize..2,
        dx in -0.02f64..0.02,
        lo in 0.001f64..0.01,
        extra in 0.0f64..0.01,
    ) {
        let (g, cfg) = golden();
        let t = perturbed(&g.trace, start, len, arm, dx);
        let at = |jump_pos: f64| {
            let mut c = cfg.clone();
            c.thresholds.jump_pos = jump_pos;
            let cl = classify(&g, &c, &t);
            SessionPhase::ALL.map(|p| cl.labels(p).contains(&OutcomeLabel::H1Position))
        };
        let (low, high) = (at(lo), at(lo + extra));
        for (l, h) in low.iter().zip(high.iter()) {
            prop_assert!(!h || *l);
        }
    }

    #[test]
    fn no_impact_means_quiet_phase(start in 100usize..29_000, len in 1usize..400, arm in 0usize..2, dx in -0.03f64..0.03) {
        let (g, cfg) = golden();
        let t = perturbed(&g.trace, start, len, arm, dx);
        let ucas = evaluate_uca(&t, &cfg.plant, &cfg.thresholds);
        let c = classify_outcome(&t, &g.trace, g.homing_tick, &ucas, &cfg.session, &cfg.thresholds);
        for p in SessionPhase::ALL {
            let labels = c.labels(p);
            if labels.contains(&OutcomeLabel::NoImpact) {
                prop_assert_eq!(labels, BTreeSet::from([OutcomeLabel::NoImpact]));
                let range = cfg.session.phase_range(p);
                prop_assert!(!ucas.iter().any(|u| u.overlaps(&range)));
                let events = t.rows[range.start as usize..range.end as usize]
                    .iter()
                    .any(|r| r.plant_events().next().is_some());
                prop_assert!(!events);
            }
        }
    }
}
