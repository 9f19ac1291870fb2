use nalgebra::Vector6;
use proptest::prelude::*;

use medteleop::compliance::{
    coupling_error, impedance_torque, step_error, CouplingFilter, CouplingLaw, CouplingParams, WrenchEstimate,
};
use medteleop::fusion::{fuse, CameraId, CameraView, KeypointSet, KEYPOINT_COUNT};
use medteleop::kinematics::builtin_arms;
use medteleop::retarget::{
    objective, retarget, ActiveSet, GraspTemplate, GraspTemplateLibrary, HandModel, RetargetParams, TemplateHand,
    TemplateSnapper, SWITCH_RATIO,
};
use medteleop::teleop::{parse_session, write_session, ClutchState, Edge, EventPayload, PedalConfig, PedalEdge, PedalId, SessionEvent};
use medteleop::{PerSide, Pose, Rotation, Side, Vec3};

fn vec3(s: f64) -> impl Strategy<Value = Vec3> {
    (-s..s, -s..s, -s..s).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn rotation() -> impl Strategy<Value = Rotation> {
    (vec3(1.0), 0.0..3.1).prop_filter_map("zero axis", |(a, t)| (a.norm() > 1e-3).then(|| Rotation::from_axis_angle(&a, t)))
}

fn pose(s: f64) -> impl Strategy<Value = Pose> {
    (rotation(), vec3(s)).prop_map(|(r, p)| Pose::new(r, p))
}

fn side() -> impl Strategy<Value = Side> {
    prop_oneof![Just(Side::Left), Just(Side::Right)]
}

fn keypoint_set() -> impl Strategy<Value = KeypointSet> {
    (pose(0.5), prop::collection::vec(vec3(0.005), KEYPOINT_COUNT)).prop_map(|(wrist, noise)| {
        let pts: Vec<Vec3> = (0..KEYPOINT_COUNT)
            .map(|i| {
                let local = if i == 0 {
                    Vec3::zeros()
                } else {
                    Vec3::new(0.03 + 0.025 * ((i - 1) % 4) as f64, -0.04 + 0.02 * ((i - 1) / 4) as f64, 0.0)
                };
                wrist.transform_point(&(local + noise[i]))
            })
            .collect();
        KeypointSet::from_slice(&pts).unwrap()
    })
}

fn payload() -> impl Strategy<Value = EventPayload> {
    let camera = |id| (vec3(1.0).prop_filter("axis", |a| a.norm() > 1e-3), prop::option::of(keypoint_set()))
        .prop_map(move |(a, k)| CameraView::new(id, a, k).unwrap());
    prop_oneof![
        (side(), pose(2.0)).prop_map(|(arm, pose)| EventPayload::HandPose { arm, pose }),
        (side(), camera(CameraId::C1), camera(CameraId::C2))
            .prop_map(|(hand, a, b)| EventPayload::Keypoints { hand, views: [a, b] }),
        (prop_oneof![Just(PedalId::Left), Just(PedalId::Right)], prop_oneof![Just(Edge::Down), Just(Edge::Up)])
            .prop_map(|(pedal, edge)| EventPayload::Pedal(PedalEdge { pedal, edge })),
        Just(EventPayload::CouplingToggle),
        (side(), "[a-z][a-z_-]{0,12}").prop_map(|(hand, name)| EventPayload::Template { hand, name }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn session_text_is_a_fixed_point(payloads in prop::collection::vec(payload(), 1..20), dt in 0.001f64..0.1) {
        let events: Vec<SessionEvent> = payloads
            .into_iter()
            .enumerate()
            .map(|(i, p)| SessionEvent::new(i as f64 * dt, p))
            .collect();
        // One pass may normalize inputs; after that write → parse is exact.
        let once = parse_session(&write_session(&events)).unwrap();
        let text = write_session(&once);
        let twice = parse_session(&text).unwrap();
        prop_assert_eq!(&twice, &once);
        prop_assert_eq!(write_session(&twice), text);
    }

    #[test]
    fn clutch_frozen_while_engaged(
        gain in 0.5f64..2.0,
        hand0 in pose(0.5),
        ee0 in pose(1.0),
        wander in prop::collection::vec(pose(0.5), 1..10),
    ) {
        let cfg = PedalConfig::default();
        let down = PedalEdge { pedal: PedalId::Left, edge: Edge::Down };
        let s = ClutchState::new(gain).on_pedal(&cfg, down, &PerSide::new(Some(hand0), Some(hand0)), &PerSide::new(ee0, ee0));
        for h in &wander {
            prop_assert_eq!(s.relative_target(Side::Left, h).unwrap(), ee0);
        }
        // A second down is ignored.
        let again = s.on_pedal(&cfg, down, &PerSide::new(Some(wander[0]), Some(wander[0])), &PerSide::new(wander[0], wander[0]));
        prop_assert_eq!(again, s);
    }

    #[test]
    fn clutch_matches_matrix_composition(gain in 0.5f64..2.0, h0 in pose(0.5), ee0 in pose(1.0), h1 in pose(0.5)) {
        let cfg = PedalConfig::default();
        let hands = PerSide::new(Some(h0), Some(h0));
        let ees = PerSide::new(ee0, ee0);
        let s = ClutchState::new(gain)
            .on_pedal(&cfg, PedalEdge { pedal: PedalId::Left, edge: Edge::Down }, &hands, &ees)
            .on_pedal(&cfg, PedalEdge { pedal: PedalId::Left, edge: Edge::Up }, &hands, &ees);
        let t = s.relative_target(Side::Right, &h1).unwrap();
        let want = ee0.rotation.to_matrix() * h0.rotation.to_matrix().transpose() * h1.rotation.to_matrix();
        prop_assert!((t.rotation.to_matrix() - want).abs().max() < 1e-9);
        let p = ee0.position + (h1.position - h0.position) * gain;
        prop_assert!((t.position - p).norm() < 1e-12);
        prop_assert!((t.rotation.quaternion_norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fusion_is_convex_and_symmetric(k1 in keypoint_set(), shift in prop::collection::vec(vec3(0.004), KEYPOINT_COUNT), a1 in vec3(1.0), a2 in vec3(1.0)) {
        prop_assume!(a1.norm() > 0.1 && a2.norm() > 0.1);
        let pts: Vec<Vec3> = k1.points().iter().zip(&shift).map(|(p, d)| p + d).collect();
        let k2 = KeypointSet::from_slice(&pts).unwrap();
        let v1 = CameraView::new(CameraId::C1, a1, Some(k1.clone())).unwrap();
        let v2 = CameraView::new(CameraId::C2, a2, Some(k2.clone())).unwrap();
        let Ok(f) = fuse(&v1, &v2) else { return Ok(()) };
        let g = fuse(
            &CameraView::new(CameraId::C1, a2, Some(k2.clone())).unwrap(),
            &CameraView::new(CameraId::C2, a1, Some(k1.clone())).unwrap(),
        ).unwrap();
        for i in 0..KEYPOINT_COUNT {
            prop_assert!((f.point(i) - g.point(i)).abs().max() <= 1e-12);
            for c in 0..3 {
                let (a, b) = (k1.point(i)[c], k2.point(i)[c]);
                prop_assert!(f.point(i)[c] >= a.min(b) - 1e-15 && f.point(i)[c] <= a.max(b) + 1e-15);
            }
        }
        // Identical views are a fixed point whatever the weights.
        let same = fuse(&v1, &CameraView::new(CameraId::C2, a2, Some(k1.clone())).unwrap()).unwrap();
        for i in 0..KEYPOINT_COUNT {
            prop_assert!((same.point(i) - k1.point(i)).abs().max() <= 1e-15);
        }
    }

    #[test]
    fn coupling_energy_never_rises(
        e0 in prop::array::uniform6(-0.2f64..0.2),
        v0 in prop::array::uniform6(-1.0f64..1.0),
        lambda in 0.5f64..6.0,
        beta in 0.0f64..2.0,
        steps in 1usize..200,
    ) {
        let p = CouplingParams { lambda, beta_damp: beta, dt: 0.01 };
        let mut f = CouplingFilter::with_state(Vector6::from(e0), Vector6::from(v0), CouplingLaw::SpringDamper);
        let mut energy = f.energy(&p);
        for _ in 0..steps {
            f.step(&Pose::identity(), &p);
            let next = f.energy(&p);
            prop_assert!(next <= energy + 1e-9);
            energy = next;
        }
    }

    #[test]
    fn coupling_equilibrium_is_scale_invariant(x in pose(1.0), c in 0.1f64..10.0) {
        let p = CouplingParams::default();
        let scaled = CouplingParams { lambda: p.lambda * c, beta_damp: p.beta_damp * c, dt: p.dt };
        let z = Vector6::zeros();
        for q in [p, scaled] {
            let (e, v) = step_error(&coupling_error(&x, &x), &z, &q, CouplingLaw::SpringDamper);
            prop_assert!(e.norm() < 1e-15 && v.norm() < 1e-13, "{e} {v}");
        }
    }

    #[test]
    fn impedance_is_linear_in_force(q in prop::collection::vec(-1.5f64..1.5, 7), f1 in vec3(20.0), f2 in vec3(20.0), m1 in vec3(2.0), m2 in vec3(2.0)) {
        let arm = builtin_arms().remove("left_arm").unwrap();
        let q = arm.joint_vector(q).unwrap();
        let g = Vec3::new(0.0, 0.0, -9.81);
        let tau = |w: WrenchEstimate| impedance_torque(&arm, &q, &w, &g).unwrap();
        let tg = arm.gravity_torques(&q, &g).unwrap();
        let sum = tau(WrenchEstimate::new(f1 + f2, m1 + m2)) - &tg;
        let parts = (tau(WrenchEstimate::new(f1, m1)) - &tg) + (tau(WrenchEstimate::new(f2, m2)) - &tg);
        prop_assert!((sum - parts).abs().max() <= 1e-12 * (1.0 + f1.norm() + f2.norm()));
        prop_assert_eq!(tau(WrenchEstimate::zero()), tg);
    }

    #[test]
    fn retarget_never_worse_than_warm_start(
        seed in prop::collection::vec(0.0f64..1.0, 32),
        v in prop::collection::vec(vec3(0.12), 5),
    ) {
        let hand = HandModel::builtin();
        let qp: Vec<f64> = hand.limits().iter().zip(seed.iter().cycle()).map(|((l, u), s)| l + s * (u - l)).collect();
        let p = RetargetParams::default();
        let q = retarget(&v, &hand.joint_vector(qp.clone()).unwrap(), &hand, &p).unwrap();
        prop_assert!(hand.within_limits(q.angles()));
        prop_assert!(objective(&hand, &v, q.angles(), &qp, &p) <= objective(&hand, &v, &qp, &qp, &p));
    }

    #[test]
    fn snapper_switches_only_for_a_clear_winner(
        templates in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 2..8),
        path in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 1..30),
    ) {
        let lib = GraspTemplateLibrary::new(
            templates.iter().enumerate().map(|(i, j)| GraspTemplate {
                name: format!("t{i}"),
                hand: TemplateHand::Both,
                tasks: vec![],
                joints: j.clone(),
            }).collect(),
        ).unwrap();
        let dist = |q: &[f64], i: usize| q.iter().zip(&templates[i]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let mut s = TemplateSnapper::new();
        let mut prev: Option<usize> = None;
        for q in &path {
            let i = s.update(q, &lib, &ActiveSet::all()).unwrap();
            let best = (0..templates.len()).map(|k| dist(q, k)).fold(f64::INFINITY, f64::min);
            if let Some(p) = prev {
                if i != p {
                    prop_assert!(dist(q, i) < SWITCH_RATIO * dist(q, p));
                    prop_assert_eq!(dist(q, i), best);
                } else {
                    prop_assert!(best >= SWITCH_RATIO * dist(q, p) - 1e-12);
                }
            }
            prev = Some(i);
        }
    }
}
