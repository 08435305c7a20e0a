//! Regenerates the bundled JSON fixtures under `fixtures/`.

use std::fs;
use std::path::Path;

use contact_retarget::pipeline::{FinalGoal, TaskSpec, Variant};
use contact_retarget::scene::{Scene, Wall};
use contact_retarget::templates::*;

fn put(dir: &Path, name: &str, text: String) {
    fs::write(dir.join(name), text + "\n").expect("write fixture");
}

fn task(name: &str, wall: Wall, demo: contact_retarget::retarget::Demo, x0: contact_retarget::geometry::Pose) -> TaskSpec {
    let mut scene = demo.scene.clone();
    scene.wall = Some(wall);
    TaskSpec {
        name: name.into(),
        scene,
        object: demo_object(),
        x0,
        demo,
        final_goal: FinalGoal::LiftAfterGrasp { height: 0.1 },
    }
}

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    fs::create_dir_all(&dir).unwrap();
    let cracker = demo_object();
    let ppg = push_pivot_grasp_demo(Wall::new(0.75, 0.0), &cracker, 0.0);
    put(&dir, "demo_push_pivot_grasp.json", ppg.to_json());
    put(&dir, "demo_pivot_grasp.json", pivot_grasp_demo(Wall::new(0.75, 0.0), &cracker, 0.0).to_json());
    put(&dir, "demo_avoidance.json", avoidance_demo(Wall::new(0.80, 0.0), &cracker).to_json());
    put(&dir, "demo_storage.json", storage_demo(Wall::new(0.80, 0.0), &cracker).to_json());
    put(&dir, "demo_retrieval.json", retrieval_demo(Wall::new(0.75, 0.0), &cracker).to_json());
    put(&dir, "demo_short_object.json", short_object_demo(Wall::new(0.80, 0.0), &cracker, 0.0).to_json());
    put(&dir, "object_cracker.json", serde_json::to_string_pretty(&cracker).unwrap());
    let mut scene = Scene::new(Some(Wall::new(0.80, 0.0)), vec![]);
    scene.gripper = template_gripper();
    put(&dir, "scene_wall_80.json", scene.to_json());

    let x0 = cracker.resting_pose(0.45, 0.0, 0.0);
    let s = |t: &TaskSpec| serde_json::to_string_pretty(t).unwrap();
    put(&dir, "task_grasping.json", s(&task("grasping", Wall::new(0.75, 0.0), ppg.clone(), x0)));
    put(&dir, "task_grasping_offset_wall.json", s(&task("grasping", Wall::new(0.80, 0.0), ppg.clone(), x0)));
    let flush = place_against(&Wall::new(0.75, 0.0), facing_wall(&Wall::new(0.75, 0.0)), 0.0, 0.0, &cracker);
    let pg = pivot_grasp_demo(Wall::new(0.75, 0.0), &cracker, 0.0);
    put(&dir, "task_pivot_grasp.json", s(&task("pivot-grasp", Wall::new(0.75, 0.0), pg, flush)));
    let tilted = contact_retarget::geometry::Pose::from_xyz_yaw(0.45, 0.0, 0.10, 0.0);
    put(&dir, "task_not_freestanding.json", s(&task("grasping", Wall::new(0.75, 0.0), ppg, tilted)));

    let cfg = EvalConfig::default();
    put(&dir, "eval_default.json", serde_json::to_string_pretty(&cfg).unwrap());
    let single = EvalConfig {
        templates: vec!["grasping".into()],
        objects: vec!["cracker".into()],
        trials_per_object: 2,
        seed: 0,
        variants: vec![Variant::Retargeted],
    };
    put(&dir, "eval_single.json", serde_json::to_string_pretty(&single).unwrap());
}
