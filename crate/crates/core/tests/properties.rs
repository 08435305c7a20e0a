use contact_retarget::contact::*;
use contact_retarget::geometry::*;
use contact_retarget::primitives::{required_contact, PrimitiveKind};
use contact_retarget::retarget::*;
use contact_retarget::scene::*;
use contact_retarget::sim::*;
use contact_retarget::solver::SolverConfig;
use contact_retarget::templates::*;
use proptest::prelude::*;

fn pose() -> impl Strategy<Value = Pose> {
    (
        -1.0..1.0f64,
        -1.0..1.0f64,
        0.0..0.5f64,
        prop::array::uniform3(-1.0..1.0f64),
        -3.0..3.0f64,
    )
        .prop_map(|(x, y, z, axis, angle)| {
            let a = Vec3::from(axis);
            let a = if a.norm() < 1e-3 { Vec3::z() } else { a.normalize() };
            Pose::new(Vec3::new(x, y, z), rot_axis(&a, angle))
        })
}

fn demo_from(poses: Vec<Pose>) -> Demo {
    let n = poses.len() - 1;
    Demo {
        scene: Scene::new(None, vec![]),
        object: demo_object(),
        final_goal: *poses.last().unwrap(),
        keyframes: poses[..n]
            .iter()
            .enumerate()
            .map(|(i, p)| Keyframe { t: i as f64, pose: *p })
            .collect(),
        labels: vec![PrimitiveKind::Push; n],
        switch_indices: (1..n).collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn remap_preserves_relative_transforms(poses in prop::collection::vec(pose(), 2..6), x0 in pose()) {
        let demo = demo_from(poses);
        let mut chain = vec![x0];
        chain.extend(remap_x(&demo, &x0));
        let anchors = demo.anchors();
        prop_assert_eq!(chain.len(), anchors.len());
        for i in 0..anchors.len() - 1 {
            let d = relative_transform(&anchors[i], &anchors[i + 1]);
            let t = relative_transform(&chain[i], &chain[i + 1]);
            prop_assert!((d.position - t.position).norm() < 1e-9);
            prop_assert!(quaternion_distance(&d.orientation, &t.orientation) < 1e-9);
        }
    }

    #[test]
    fn zero_action_is_a_fixpoint(x in 0.3..0.6f64, y in -0.3..0.3f64, yaw in -3.0..3.0f64, wall_x in 0.70..0.85f64) {
        let scene = Scene::new(Some(Wall::new(wall_x, 0.0)), vec![]);
        let obj = demo_object();
        let s = SimState::parked(obj.resting_pose(x, y, yaw), &scene, &obj);
        let next = step(&s, &Action::zero(), &scene, &obj).unwrap();
        prop_assert_eq!(next, s);
    }

    #[test]
    fn free_gripper_motion_never_moves_a_resting_object(
        yaw in -3.0..3.0f64,
        t in prop::array::uniform3(-0.005..0.005f64),
        n in 1usize..40,
    ) {
        let scene = Scene::new(None, vec![]);
        let obj = demo_object();
        let x = obj.resting_pose(0.45, 0.0, yaw);
        let mut s = SimState::parked(x, &scene, &obj);
        let a = Action::translate(Vec3::from(t) * (MAX_STEP_TRANSLATION * 0.99 / 0.005 / 3f64.sqrt()));
        for _ in 0..n {
            match step(&s, &a, &scene, &obj) {
                Ok(next) => s = next,
                Err(_) => break,
            }
        }
        prop_assert_eq!(s.object_pose, x);
    }

    #[test]
    fn oversize_actions_are_rejected(scale in 1.01..10.0f64) {
        let scene = Scene::new(None, vec![]);
        let obj = demo_object();
        let s = SimState::parked(obj.resting_pose(0.45, 0.0, 0.0), &scene, &obj);
        let a = Action::translate(Vec3::x() * MAX_STEP_TRANSLATION * scale);
        let is_bounds_error = matches!(step(&s, &a, &scene, &obj), Err(SimError::ActionOutOfBounds { .. }));
        prop_assert!(is_bounds_error);
    }

    #[test]
    fn settle_leaves_objects_freestanding(p in pose()) {
        let scene = Scene::new(None, vec![]);
        let obj = demo_object();
        let y = settle(&p, &scene, &obj);
        prop_assert!(ground_residual(&y, &obj).abs() < 1e-9);
        prop_assert!(is_freestanding(&y, &obj, &scene, RUNTIME_TOL));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn wall_switch_solutions_meet_their_contacts(
        wall_x in 0.70..0.85f64,
        wall_yaw in -10.0..10.0f64,
        gap in 0.0..0.08f64,
        dyaw in -0.3..0.3f64,
    ) {
        let wall = Wall::new(wall_x, wall_yaw);
        let scene = Scene::new(Some(wall.clone()), vec![]);
        let obj = demo_object();
        let guess = place_against(&wall, facing_wall(&wall) * rot_z(dyaw), 0.0, gap, &obj);
        let g = retarget_x(
            &required_contact(PrimitiveKind::Push),
            &required_contact(PrimitiveKind::Pivot),
            &scene,
            &obj,
            &guess,
            &SolverConfig::default(),
        )
        .unwrap();
        let w = wall_residual(&g.center, &obj, &scene).unwrap();
        prop_assert!(w[0].abs() <= 1e-6 && w[1].abs() <= 1e-6);
        prop_assert!(ground_residual(&g.center, &obj).abs() <= 1e-6);
        prop_assert!(is_freestanding(&g.center, &obj, &scene, 1e-6));
        prop_assert!(g.contains_pose(&g.center));
    }
}
