//! Bundled task templates, object sets and randomized batches.

use nalgebra::UnitQuaternion;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

use crate::contact::{grasp_config, ContactError};
use crate::geometry::{rot_axis, rot_z, Pose, Vec3};
use crate::pipeline::{FinalGoal, Trial, Variant, DEFAULT_LIFT};
use crate::primitives::PrimitiveKind;
use crate::retarget::{Demo, GoalRegion, Keyframe};
use crate::scene::{Aabb, GripperModel, ObjectModel, Obstacle, Scene, Wall};

use PrimitiveKind::{Grasp, Pivot, Pull, Push};

/// Templates in the default evaluation batch.
pub const EVAL_TEMPLATES: [&str; 4] = ["grasping", "avoidance", "storage", "retrieval"];
pub const ALL_TEMPLATES: [&str; 6] = ["grasping", "pivot-grasp", "avoidance", "storage", "retrieval", "short-object"];

pub const WALL_X_RANGE: (f64, f64) = (0.70, 0.85);
pub const WALL_YAW_RANGE_DEG: f64 = 10.0;
/// Gap the short-object pull opens between the object and the wall.
pub const SHORT_OBJECT_PULL: f64 = 0.03;
/// Slot between the wall and the storage shelf, measured at the shelf centre.
pub const SHELF_GAP: f64 = 0.11;
/// Tangential offset of the storage slot from the wall centre.
pub const SHELF_OFFSET: f64 = -0.25;

pub fn demo_object() -> ObjectModel {
    ObjectModel::new("cracker", 0.100, 0.075, 0.030)
}

/// The seven box dimension sets used in the evaluation batch.
pub fn standard_objects() -> Vec<ObjectModel> {
    vec![
        ObjectModel::new("cracker", 0.100, 0.075, 0.030),
        ObjectModel::new("cereal", 0.115, 0.080, 0.032),
        ObjectModel::new("cocoa", 0.075, 0.045, 0.035),
        ObjectModel::new("flapjack", 0.085, 0.060, 0.025),
        ObjectModel::new("oat", 0.095, 0.065, 0.035),
        ObjectModel::new("seasoning", 0.068, 0.042, 0.030),
        ObjectModel::new("wafer", 0.090, 0.055, 0.020),
    ]
}

/// Boxes too short to grasp flush against the wall.
pub fn short_objects() -> Vec<ObjectModel> {
    vec![
        ObjectModel::new("tea", 0.050, 0.040, 0.025),
        ObjectModel::new("gum", 0.045, 0.035, 0.020),
        ObjectModel::new("jelly", 0.055, 0.045, 0.022),
    ]
}

pub fn find_object(name: &str) -> Option<ObjectModel> {
    standard_objects()
        .into_iter()
        .chain(short_objects())
        .find(|o| o.name == name)
}

/// Gripper with a workspace wide enough for every template.
pub fn template_gripper() -> GripperModel {
    GripperModel {
        workspace: Aabb {
            min: [-0.35, -0.7, 0.0],
            max: [1.0, 0.7, 0.6],
        },
        ..GripperModel::default()
    }
}

fn scene(wall: Wall, obstacles: Vec<Obstacle>) -> Scene {
    Scene {
        gripper: template_gripper(),
        ..Scene::new(Some(wall), obstacles)
    }
}

/// Orientation of a flat box whose body x points into the wall.
pub fn facing_wall(wall: &Wall) -> UnitQuaternion<f64> {
    let n = wall.inward_normal();
    rot_z((-n.y).atan2(-n.x))
}

/// `facing_wall` rotated by `angle` about the wall tangent; a quarter turn
/// stands the box on its end.
pub fn tipped(wall: &Wall, angle: f64) -> UnitQuaternion<f64> {
    rot_axis(&wall.tangent(), angle) * facing_wall(wall)
}

/// Box resting on the ground, touching the wall, at tangential offset `s`
/// from the wall centre (plus `gap` off the wall).
pub fn place_against(wall: &Wall, q: UnitQuaternion<f64>, s: f64, gap: f64, obj: &ObjectModel) -> Pose {
    let n = wall.inward_normal();
    let corners: Vec<Vec3> = obj.cuboid().local_corners().iter().map(|c| q * c).collect();
    let min_z = corners.iter().map(|c| c.z).fold(f64::INFINITY, f64::min);
    let min_n = corners.iter().map(|c| c.dot(&n)).fold(f64::INFINITY, f64::min);
    let mut p = wall.center() + wall.tangent() * s + n * (gap - min_n);
    p.z = -min_z;
    Pose::new(p, q)
}

fn lifted(x: &Pose, h: f64) -> Pose {
    let mut y = *x;
    y.position.z += h;
    y
}

fn keyframes(poses: &[Pose]) -> Vec<Keyframe> {
    poses
        .iter()
        .enumerate()
        .map(|(i, p)| Keyframe { t: i as f64, pose: *p })
        .collect()
}

fn demo(scene: Scene, object: ObjectModel, poses: &[Pose], labels: Vec<PrimitiveKind>, switch_indices: Vec<usize>) -> Demo {
    Demo {
        scene,
        object,
        keyframes: keyframes(poses),
        labels,
        switch_indices,
        final_goal: *poses.last().expect("non-empty"),
    }
}

/// Push to the wall, pivot upright, grasp and lift. `s` is the tangential
/// offset of the whole demo.
pub fn push_pivot_grasp_demo(wall: Wall, obj: &ObjectModel, s: f64) -> Demo {
    let q0 = facing_wall(&wall);
    let start = place_against(&wall, q0, s, 0.20, obj);
    let mid = place_against(&wall, q0, s, 0.10, obj);
    let flush = place_against(&wall, q0, s, 0.0, obj);
    let half = place_against(&wall, tipped(&wall, FRAC_PI_2 / 2.0), s, 0.0, obj);
    let up = place_against(&wall, tipped(&wall, FRAC_PI_2), s, 0.0, obj);
    let poses = [start, mid, flush, half, up, lifted(&up, DEFAULT_LIFT)];
    demo(scene(wall, vec![]), obj.clone(), &poses, vec![Push, Pivot, Grasp], vec![2, 4])
}

pub fn pivot_grasp_demo(wall: Wall, obj: &ObjectModel, s: f64) -> Demo {
    let flush = place_against(&wall, facing_wall(&wall), s, 0.0, obj);
    let half = place_against(&wall, tipped(&wall, FRAC_PI_2 / 2.0), s, 0.0, obj);
    let up = place_against(&wall, tipped(&wall, FRAC_PI_2), s, 0.0, obj);
    let poses = [flush, half, up, lifted(&up, DEFAULT_LIFT)];
    demo(scene(wall, vec![]), obj.clone(), &poses, vec![Pivot, Grasp], vec![2])
}

/// Push-pivot-grasp with a pull away from the wall before the grasp.
pub fn short_object_demo(wall: Wall, obj: &ObjectModel, s: f64) -> Demo {
    let q0 = facing_wall(&wall);
    let start = place_against(&wall, q0, s, 0.20, obj);
    let flush = place_against(&wall, q0, s, 0.0, obj);
    let half = place_against(&wall, tipped(&wall, FRAC_PI_2 / 2.0), s, 0.0, obj);
    let up = place_against(&wall, tipped(&wall, FRAC_PI_2), s, 0.0, obj);
    let pulled = place_against(&wall, tipped(&wall, FRAC_PI_2), s, SHORT_OBJECT_PULL, obj);
    let poses = [start, flush, half, up, pulled, lifted(&pulled, DEFAULT_LIFT)];
    demo(scene(wall, vec![]), obj.clone(), &poses, vec![Push, Pivot, Pull, Grasp], vec![1, 3, 4])
}

pub fn avoidance_obstacles() -> Vec<Obstacle> {
    vec![Obstacle::reference_1([-0.071, 0.146])]
}

const AVOID_START: [f64; 2] = [-0.07, -0.20];
const AVOID_TURN: [f64; 2] = [0.20, -0.20];
const AVOID_END: [f64; 2] = [0.20, 0.35];

/// Two pushes routing the box around obstacle 1.
pub fn avoidance_demo(wall: Wall, obj: &ObjectModel) -> Demo {
    let at = |p: [f64; 2]| obj.resting_pose(p[0], p[1], 0.0);
    let poses = [
        at(AVOID_START),
        at([0.07, -0.20]),
        at(AVOID_TURN),
        at([0.20, 0.07]),
        at(AVOID_END),
    ];
    demo(scene(wall, avoidance_obstacles()), obj.clone(), &poses, vec![Push, Push], vec![2])
}

/// Shelf whose face runs parallel to the wall's tangent at the slot.
pub fn storage_shelf(wall: &Wall) -> Obstacle {
    let shelf = Obstacle::reference_2([0.0, 0.0]);
    let c = wall.center() + wall.tangent() * SHELF_OFFSET + wall.inward_normal() * (SHELF_GAP + shelf.half_extents.half_extents[0]);
    Obstacle::reference_2([c.x, c.y])
}

pub fn storage_goal(wall: &Wall, obj: &ObjectModel) -> Pose {
    place_against(wall, tipped(wall, FRAC_PI_2), SHELF_OFFSET, 0.0, obj)
}

/// Push to the wall, pivot upright, pull along the wall into the slot beside
/// the shelf.
pub fn storage_demo(wall: Wall, obj: &ObjectModel) -> Demo {
    let q0 = facing_wall(&wall);
    let start = place_against(&wall, q0, 0.0, 0.20, obj);
    let flush = place_against(&wall, q0, 0.0, 0.0, obj);
    let half = place_against(&wall, tipped(&wall, FRAC_PI_2 / 2.0), 0.0, 0.0, obj);
    let up = place_against(&wall, tipped(&wall, FRAC_PI_2), 0.0, 0.0, obj);
    let slot = storage_goal(&wall, obj);
    let poses = [start, flush, half, up, slot];
    let shelf = storage_shelf(&wall);
    demo(scene(wall, vec![shelf]), obj.clone(), &poses, vec![Push, Pivot, Pull], vec![1, 3])
}

pub fn retrieval_demo_obstacles() -> Vec<Obstacle> {
    vec![Obstacle::reference_2([-0.19, 0.49]), Obstacle::reference_3([0.238, 0.33])]
}

pub fn retrieval_test_obstacles() -> Vec<Obstacle> {
    vec![Obstacle::reference_2([-0.19, 0.54]), Obstacle::reference_3([0.238, 0.353])]
}

const RETRIEVE_START: [f64; 2] = [0.02, 0.43];
const RETRIEVE_OUT_Y: f64 = 0.0;

/// Pull the box out from between two obstacles, push it to the wall, pivot
/// and grasp.
pub fn retrieval_demo(wall: Wall, obj: &ObjectModel) -> Demo {
    let start = obj.resting_pose(RETRIEVE_START[0], RETRIEVE_START[1], FRAC_PI_2);
    let out = obj.resting_pose(RETRIEVE_START[0], RETRIEVE_OUT_Y, FRAC_PI_2);
    let s = -RETRIEVE_OUT_Y;
    let mid = obj.resting_pose(0.35, RETRIEVE_OUT_Y, FRAC_PI_2 / 2.0);
    let flush = place_against(&wall, facing_wall(&wall), s, 0.0, obj);
    let half = place_against(&wall, tipped(&wall, FRAC_PI_2 / 2.0), s, 0.0, obj);
    let up = place_against(&wall, tipped(&wall, FRAC_PI_2), s, 0.0, obj);
    let poses = [start, out, mid, flush, half, up, lifted(&up, DEFAULT_LIFT)];
    demo(
        scene(wall, retrieval_demo_obstacles()),
        obj.clone(),
        &poses,
        vec![Pull, Push, Pivot, Grasp],
        vec![1, 3, 5],
    )
}

/// Whether `obj` standing upright flush against `wall` leaves no room for
/// the fingers.
pub fn needs_short_branch(wall: &Wall, obj: &ObjectModel) -> bool {
    let up = place_against(wall, tipped(wall, FRAC_PI_2), 0.0, 0.0, obj);
    let sc = scene(wall.clone(), vec![]);
    matches!(grasp_config(&up, obj, &sc.gripper, &sc), Err(ContactError::NoClearance { .. }))
}

fn mix_seed(template: &str, object: &str, seed: u64) -> u64 {
    // FNV-1a over the names keeps seeds stable across runs and platforms.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in template.bytes().chain([0]).chain(object.bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn random_wall(rng: &mut ChaCha8Rng) -> Wall {
    Wall::new(
        rng.gen_range(WALL_X_RANGE.0..=WALL_X_RANGE.1),
        rng.gen_range(-WALL_YAW_RANGE_DEG..=WALL_YAW_RANGE_DEG),
    )
}

fn jitter(rng: &mut ChaCha8Rng, r: f64) -> f64 {
    rng.gen_range(-r..=r)
}

fn finish(name: &str, scene: Scene, object: &ObjectModel, x0: Pose, demo: Demo, final_goal: FinalGoal) -> crate::pipeline::TaskSpec {
    crate::pipeline::TaskSpec {
        name: name.to_string(),
        scene,
        object: object.clone(),
        x0,
        demo,
        final_goal,
    }
}

fn lift_goal() -> FinalGoal {
    FinalGoal::LiftAfterGrasp { height: DEFAULT_LIFT }
}

/// Randomized test task for a template. The test wall is drawn from the
/// randomization ranges and `x0` is jittered around the demo start.
pub fn build_task(template: &str, object: &ObjectModel, seed: u64) -> Option<crate::pipeline::TaskSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(template, &object.name, seed));
    let wall = random_wall(&mut rng);
    let cracker = demo_object();
    let task = match template {
        "grasping" => {
            if needs_short_branch(&wall, object) {
                return build_task_with_wall("short-object", object, wall, &mut rng);
            }
            build_task_with_wall("grasping", object, wall, &mut rng)?
        }
        "avoidance" => {
            let demo = avoidance_demo(Wall::new(0.80, 0.0), &cracker);
            let x0 = object.resting_pose(
                AVOID_START[0] + jitter(&mut rng, 0.02),
                AVOID_START[1] + jitter(&mut rng, 0.02),
                jitter(&mut rng, 10f64.to_radians()),
            );
            let goal = GoalRegion::ball(object.resting_pose(AVOID_END[0], AVOID_END[1], 0.0));
            finish(
                template,
                scene(wall, avoidance_obstacles()),
                object,
                x0,
                demo,
                FinalGoal::Region { region: goal },
            )
        }
        "storage" => {
            let demo = storage_demo(Wall::new(0.80, 0.0), &cracker);
            let x0 = jittered_start(&mut rng, object);
            let goal = GoalRegion::ball(storage_goal(&wall, object));
            let shelf = storage_shelf(&wall);
            finish(template, scene(wall, vec![shelf]), object, x0, demo, FinalGoal::Region { region: goal })
        }
        "retrieval" => {
            let demo = retrieval_demo(Wall::new(0.75, 0.0), &cracker);
            let x0 = object.resting_pose(
                RETRIEVE_START[0] + jitter(&mut rng, 0.01),
                RETRIEVE_START[1] + 0.02 + jitter(&mut rng, 0.01),
                FRAC_PI_2 + jitter(&mut rng, 3f64.to_radians()),
            );
            finish(template, scene(wall, retrieval_test_obstacles()), object, x0, demo, lift_goal())
        }
        other => build_task_with_wall(other, object, wall, &mut rng)?,
    };
    Some(task)
}

/// Flat box near the grasping demo's start pose.
fn jittered_start(rng: &mut ChaCha8Rng, object: &ObjectModel) -> Pose {
    object.resting_pose(
        0.45 + jitter(rng, 0.02),
        jitter(rng, 0.03),
        jitter(rng, 10f64.to_radians()),
    )
}

fn build_task_with_wall(template: &str, object: &ObjectModel, wall: Wall, rng: &mut ChaCha8Rng) -> Option<crate::pipeline::TaskSpec> {
    let cracker = demo_object();
    let task = match template {
        "grasping" => {
            let demo = push_pivot_grasp_demo(Wall::new(0.75, 0.0), &cracker, 0.0);
            let x0 = jittered_start(rng, object);
            finish(template, scene(wall, vec![]), object, x0, demo, lift_goal())
        }
        "short-object" => {
            let demo = short_object_demo(Wall::new(0.80, 0.0), &cracker, 0.0);
            let x0 = jittered_start(rng, object);
            finish(template, scene(wall, vec![]), object, x0, demo, lift_goal())
        }
        "pivot-grasp" => {
            let demo = pivot_grasp_demo(Wall::new(0.75, 0.0), &cracker, 0.0);
            let x0 = place_against(&wall, facing_wall(&wall) * rot_z(0.0), jitter(rng, 0.1), 0.0, object);
            finish(template, scene(wall, vec![]), object, x0, demo, lift_goal())
        }
        _ => return None,
    };
    Some(task)
}

/// Batch description read by the `eval` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub templates: Vec<String>,
    /// Object names; empty means the standard set.
    #[serde(default)]
    pub objects: Vec<String>,
    pub trials_per_object: u64,
    #[serde(default)]
    pub seed: u64,
    pub variants: Vec<Variant>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            templates: EVAL_TEMPLATES.iter().map(|s| s.to_string()).collect(),
            objects: vec![],
            trials_per_object: 5,
            seed: 0,
            variants: vec![Variant::Retargeted, Variant::Ablated],
        }
    }
}

impl EvalConfig {
    pub fn trials(&self) -> Result<Vec<Trial>, String> {
        let objects = if self.objects.is_empty() {
            standard_objects()
        } else {
            self.objects
                .iter()
                .map(|n| find_object(n).ok_or_else(|| format!("unknown object '{n}'")))
                .collect::<Result<_, _>>()?
        };
        let mut out = Vec::new();
        for t in &self.templates {
            if !ALL_TEMPLATES.contains(&t.as_str()) {
                return Err(format!("unknown template '{t}'"));
            }
            for o in &objects {
                for k in 0..self.trials_per_object {
                    let seed = self.seed.wrapping_add(k);
                    let task = build_task(t, o, seed).ok_or_else(|| format!("template '{t}' unavailable"))?;
                    out.push(Trial {
                        task,
                        template: t.clone(),
                        object: o.name.clone(),
                        seed,
                    });
                }
            }
        }
        Ok(out)
    }
}
