use contact_retarget::geometry::quaternion_distance;
use contact_retarget::pipeline::*;
use contact_retarget::retarget::Demo;
use contact_retarget::scene::Wall;
use contact_retarget::sim::{read_jsonl, write_jsonl, Outcome};
use contact_retarget::templates::*;

fn fixture(name: &str) -> String {
    std::fs::read_to_string(format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

fn task(name: &str) -> TaskSpec {
    TaskSpec::from_json(&fixture(name)).unwrap()
}

#[test]
fn bundled_demos_validate() {
    for name in [
        "demo_push_pivot_grasp.json",
        "demo_pivot_grasp.json",
        "demo_avoidance.json",
        "demo_storage.json",
        "demo_retrieval.json",
        "demo_short_object.json",
    ] {
        let demo = Demo::from_json(&fixture(name)).unwrap();
        let v = validate_demo(&demo).unwrap();
        assert!(v.passed, "{name}: {v:?}");
    }
}

#[test]
fn switch_off_the_wall_fails_validation() {
    let mut demo = Demo::from_json(&fixture("demo_push_pivot_grasp.json")).unwrap();
    let k = demo.switch_indices[0];
    demo.keyframes[k].pose.position.x -= 0.03;
    let v = validate_demo(&demo).unwrap();
    assert!(!v.passed);
    let s = &v.switches[0];
    assert_eq!(s.index, 1);
    assert!(!s.passed);
    assert_eq!(s.violated.as_deref(), Some("wall"));
    assert!((s.residual - 0.03).abs() < 1e-9, "{}", s.residual);
    assert!(v.switches[1].passed);
}

#[test]
fn grasping_task_succeeds() {
    let out = compose_policy(&task("task_grasping.json"), &PipelineConfig::default()).unwrap();
    let r = &out.report;
    assert!(r.success, "{:?}", r.failure_reason);
    assert_eq!(r.primitives.len(), 3);
    assert!(r.primitives.iter().all(|p| p.outcome == Outcome::ReachedGoal));
    assert!(r.switch_checks.iter().all(|c| c.passed()));
}

#[test]
fn pivot_grasp_task_succeeds_with_two_primitives() {
    let out = compose_policy(&task("task_pivot_grasp.json"), &PipelineConfig::default()).unwrap();
    assert!(out.report.success, "{:?}", out.report.failure_reason);
    assert_eq!(out.report.primitives.len(), 2);
}

#[test]
fn ablation_on_offset_wall_misses_the_wall() {
    let t = task("task_grasping_offset_wall.json");
    let out = compose_policy_ablated(&t, &PipelineConfig::default()).unwrap();
    assert!(!out.report.success);
    assert_eq!(out.report.failure_reason.as_deref(), Some("precondition: wall"));
    let g1 = out.report.goal_sequence.goals[0].center;
    assert!((g1.position.x - 0.65).abs() < 1e-9, "goal 1 stays 5 cm short of the wall");
    assert!(compose_policy(&t, &PipelineConfig::default()).unwrap().report.success);
}

#[test]
fn demo_scene_reproduces_demo_switches() {
    let demo = push_pivot_grasp_demo(Wall::new(0.75, 0.0), &demo_object(), 0.0);
    let t = TaskSpec {
        name: "self".into(),
        scene: demo.scene.clone(),
        object: demo.object.clone(),
        x0: demo.keyframes[0].pose,
        demo: demo.clone(),
        final_goal: FinalGoal::Remapped,
    };
    let cfg = PipelineConfig::default();
    let full = compose_policy(&t, &cfg).unwrap().report;
    let ablated = compose_policy_ablated(&t, &cfg).unwrap().report;
    assert!(full.success && ablated.success, "{:?} {:?}", full.failure_reason, ablated.failure_reason);
    for ((g, a), s) in full.goal_sequence.goals.iter().zip(&ablated.goal_sequence.goals).zip(demo.switch_poses()) {
        assert!(g.contains_pose(&s));
        assert!((g.center.position - a.center.position).norm() < 1e-9);
        assert!(quaternion_distance(&g.center.orientation, &a.center.orientation) < 1e-9);
    }
}

#[test]
fn not_freestanding_start_is_rejected() {
    let e = compose_policy(&task("task_not_freestanding.json"), &PipelineConfig::default()).unwrap_err();
    assert!(e.is_infeasible());
}

#[test]
fn audit_matches_report_after_serialization() {
    let cfg = PipelineConfig::default();
    for (t, variant) in [
        (task("task_grasping.json"), Variant::Retargeted),
        (task("task_grasping_offset_wall.json"), Variant::Ablated),
    ] {
        let out = run_variant(&t, variant, &cfg).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&out.records(), &mut buf).unwrap();
        let records: Vec<TrajectoryRecord> = read_jsonl(&buf[..]).unwrap();
        assert_eq!(audit(&records).unwrap(), out.report.success);
    }
    assert!(audit(&[]).is_err());
}

#[test]
fn eval_rows_and_summary() {
    let cfg = EvalConfig {
        templates: vec!["grasping".into(), "avoidance".into()],
        objects: vec!["cracker".into(), "wafer".into()],
        trials_per_object: 2,
        seed: 3,
        variants: vec![Variant::Retargeted, Variant::Ablated],
    };
    let trials = cfg.trials().unwrap();
    assert_eq!(trials.len(), 8);
    let rows = evaluate(&trials, &cfg.variants, &PipelineConfig::default());
    assert_eq!(rows.len(), 16);
    let again = evaluate(&trials, &cfg.variants, &PipelineConfig::default());
    let strip = |r: &[EvalRow]| r.iter().map(|r| (r.task.clone(), r.variant, r.seed, r.success, r.failure_reason.clone(), r.steps)).collect::<Vec<_>>();
    assert_eq!(strip(&rows), strip(&again));
    let summary = summarize(&rows);
    assert_eq!(summary.len(), 4);
    assert!(summary.iter().all(|l| l.trials == 4));
    assert!(evaluate(&trials, &[], &PipelineConfig::default()).is_empty());
}

#[test]
fn retrieval_template_uses_table_obstacles() {
    let t = build_task("retrieval", &demo_object(), 0).unwrap();
    let demo_xy: Vec<[f64; 2]> = t.demo.scene.obstacles.iter().map(|o| o.center_xy).collect();
    let test_xy: Vec<[f64; 2]> = t.scene.obstacles.iter().map(|o| o.center_xy).collect();
    assert_eq!(demo_xy, vec![[-0.19, 0.49], [0.238, 0.33]]);
    assert_eq!(test_xy, vec![[-0.19, 0.54], [0.238, 0.353]]);
}

#[test]
fn template_starts_are_freestanding_and_seeded() {
    for tpl in ALL_TEMPLATES {
        for o in standard_objects() {
            let a = build_task(tpl, &o, 7).unwrap();
            let b = build_task(tpl, &o, 7).unwrap();
            assert_eq!(a, b);
            assert!(contact_retarget::pipeline::check_task(&a).is_ok(), "{tpl} {}", o.name);
        }
    }
    let a = build_task("grasping", &demo_object(), 0).unwrap();
    let b = build_task("grasping", &demo_object(), 1).unwrap();
    assert_ne!(a.scene, b.scene);
}

#[test]
fn short_objects_take_the_pull_branch() {
    for o in short_objects() {
        let t = build_task("grasping", &o, 0).unwrap();
        assert_eq!(t.name, "short-object");
    }
    for o in standard_objects() {
        assert_eq!(build_task("grasping", &o, 0).unwrap().name, "grasping");
    }
}
