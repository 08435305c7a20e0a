//! Deterministic quasi-static world model.
//!
//! Object motion is decided per step by contact mode:
//! - attached: rigid with the gripper;
//! - finger on the far side of an object braced against the wall, gripper
//!   rotating about the wall tangent: two-contact rocking on ground and wall;
//! - finger on a side or the top with planar gripper motion: sticky planar
//!   transport, pushed back out of the wall and stopped at obstacles;
//! - otherwise the object stays put and the gripper is clipped against it.
//!
//! An unsupported object that is not freestanding topples to the nearest face.

use std::fmt;

use nalgebra::UnitQuaternion;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contact::{
    ground_residual, is_freestanding, most_vertical_axis, wall_clearance, GripperConfig, RUNTIME_TOL,
};
use crate::geometry::{box_separation, corners, rot_axis, Cuboid, Pose, Vec3};
use crate::primitives::Policy;
use crate::retarget::GoalRegion;
use crate::scene::{ObjectModel, Scene, WALL_SLAB_THICKNESS};

pub const MAX_STEP_TRANSLATION: f64 = 0.005;
pub const MAX_STEP_ROTATION: f64 = 2.0 * std::f64::consts::PI / 180.0;
pub const SAFE_HEIGHT: f64 = 0.4;
/// Deepest admissible interpenetration between any two bodies.
pub const PENETRATION_TOL: f64 = 1e-3;
/// Grasps attach only when the finger axis is this close to a face normal.
pub const GRASP_ALIGN_TOL: f64 = 5.0 * std::f64::consts::PI / 180.0;
/// Side contact breaks when the gripper backs off the face by more than this.
const SEPARATION_TOL: f64 = 1e-4;
const CLIP_EPS: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("action exceeds per-step bounds: |translation| {translation:.6} m, |rotation| {rotation:.6} rad")]
    ActionOutOfBounds { translation: f64, rotation: f64 },
    #[error("gripper left the workspace at ({0:.3}, {1:.3}, {2:.3})")]
    WorkspaceViolation(f64, f64, f64),
    #[error("unreachable: {0}")]
    Unreachable(String),
}

/// Per-step gripper command. Translation is in the world frame; rotation is a
/// world-frame rotation vector about the fingertip centre.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub translation: Vec3,
    pub rotation: Vec3,
    pub finger: f64,
}

impl Default for Action {
    fn default() -> Self {
        Self::zero()
    }
}

impl Action {
    pub fn zero() -> Self {
        Self {
            translation: Vec3::zeros(),
            rotation: Vec3::zeros(),
            finger: 0.0,
        }
    }

    pub fn translate(t: Vec3) -> Self {
        Self {
            translation: t,
            ..Self::zero()
        }
    }

    pub fn rotate(w: Vec3) -> Self {
        Self {
            rotation: w,
            ..Self::zero()
        }
    }

    pub fn fingers(delta: f64) -> Self {
        Self {
            finger: delta,
            ..Self::zero()
        }
    }

    /// Translation towards `delta`, saturated at the per-step bound.
    pub fn toward(delta: Vec3) -> Self {
        let n = delta.norm();
        if n > MAX_STEP_TRANSLATION {
            Self::translate(delta * (MAX_STEP_TRANSLATION / n))
        } else {
            Self::translate(delta)
        }
    }

    pub fn is_zero(&self) -> bool {
        self.translation == Vec3::zeros() && self.rotation == Vec3::zeros() && self.finger == 0.0
    }

    pub fn within_bounds(&self) -> bool {
        self.translation.norm() <= MAX_STEP_TRANSLATION * (1.0 + 1e-9)
            && self.rotation.norm() <= MAX_STEP_ROTATION * (1.0 + 1e-9)
            && self.finger.is_finite()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContactFlags {
    pub object_ground: bool,
    pub object_wall: bool,
    pub finger_object_top: bool,
    pub finger_object_side: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub object_pose: Pose,
    pub gripper: GripperConfig,
    pub attached: bool,
    pub contact_flags: ContactFlags,
}

impl SimState {
    /// State with flags computed from geometry.
    pub fn new(object_pose: Pose, gripper: GripperConfig, attached: bool, scene: &Scene, obj: &ObjectModel) -> Self {
        let contact_flags = contact_flags(&object_pose, &gripper, attached, scene, obj);
        Self {
            object_pose,
            gripper,
            attached,
            contact_flags,
        }
    }

    /// Object at `x` with the gripper parked at the safe height above it.
    pub fn parked(x: Pose, scene: &Scene, obj: &ObjectModel) -> Self {
        let tip = Vec3::new(x.position.x, x.position.y, SAFE_HEIGHT);
        let g = GripperConfig::top_down(tip, 0.0, 0.0, &scene.gripper);
        Self::new(x, g, false, scene, obj)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Blocker {
    Ground,
    Wall,
    Object,
    Obstacle(String),
}

impl fmt::Display for Blocker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Blocker::Ground => write!(f, "ground"),
            Blocker::Wall => write!(f, "wall"),
            Blocker::Object => write!(f, "object"),
            Blocker::Obstacle(n) => write!(f, "obstacle '{n}'"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "event")]
pub enum SimEvent {
    Clipped { by: Blocker },
    Attached,
    GraspFailed,
    Released,
    Settled,
}

/// Outward normal of the face of `cuboid` nearest to surface point `p`.
pub fn face_normal_at(cuboid: &Cuboid, pose: &Pose, p: &Vec3) -> Vec3 {
    let local = pose.orientation.inverse() * (p - pose.position);
    let h = cuboid.half();
    let k = (0..3)
        .max_by(|&a, &b| (local[a].abs() - h[a]).total_cmp(&(local[b].abs() - h[b])))
        .expect("three axes");
    let sign = if local[k] >= 0.0 { 1.0 } else { -1.0 };
    pose.orientation * Vec3::ith(k, sign)
}

fn finger_points(g: &GripperConfig, scene: &Scene) -> Vec<Vec3> {
    if g.opening > 1e-9 {
        g.fingertips(&scene.gripper).to_vec()
    } else {
        vec![g.tip_center(&scene.gripper)]
    }
}

/// Contact flags of a configuration at runtime tolerance.
pub fn contact_flags(x: &Pose, g: &GripperConfig, attached: bool, scene: &Scene, obj: &ObjectModel) -> ContactFlags {
    let mut f = ContactFlags {
        object_ground: ground_residual(x, obj).abs() <= RUNTIME_TOL,
        object_wall: scene.wall.is_some() && wall_clearance(x, obj, scene).abs() <= RUNTIME_TOL,
        finger_object_top: false,
        finger_object_side: attached,
    };
    if attached {
        return f;
    }
    for p in finger_points(g, scene) {
        if obj.cuboid().signed_distance(x, &p).abs() <= RUNTIME_TOL {
            if face_normal_at(obj.cuboid(), x, &p).z > 0.7 {
                f.finger_object_top = true;
            } else {
                f.finger_object_side = true;
            }
        }
    }
    f
}

/// Gripper after a fraction `s` of `a`, rotating about the fingertip centre.
pub fn apply_to_gripper(g: &GripperConfig, a: &Action, s: f64, scene: &Scene) -> GripperConfig {
    let m = &scene.gripper;
    let tip = g.tip_center(m);
    let rot = UnitQuaternion::from_scaled_axis(a.rotation * s);
    let orientation = rot * g.pose.orientation;
    let new_tip = tip + a.translation * s;
    GripperConfig {
        pose: Pose {
            position: new_tip - orientation * Vec3::new(0.0, 0.0, m.finger_length),
            orientation,
        },
        opening: g.opening,
    }
}

/// Object carried rigidly by a fraction `s` of the gripper motion `a`.
fn carry(x: &Pose, g: &GripperConfig, a: &Action, s: f64, scene: &Scene) -> Pose {
    let tip = g.tip_center(&scene.gripper);
    let rot = UnitQuaternion::from_scaled_axis(a.rotation * s);
    Pose {
        position: tip + rot * (x.position - tip) + a.translation * s,
        orientation: rot * x.orientation,
    }
}

/// Worst penetration of the object into ground, wall and obstacles, with the
/// body responsible. Non-positive when clear.
fn object_penetration(x: &Pose, scene: &Scene, obj: &ObjectModel) -> (f64, Option<Blocker>) {
    let mut worst = (0.0, None);
    let g = -ground_residual(x, obj);
    if g > worst.0 {
        worst = (g, Some(Blocker::Ground));
    }
    let w = -wall_clearance(x, obj, scene);
    if w > worst.0 {
        worst = (w, Some(Blocker::Wall));
    }
    for o in &scene.obstacles {
        let d = -box_separation(obj.cuboid(), x, &o.half_extents, &o.pose());
        if d > worst.0 {
            worst = (d, Some(Blocker::Obstacle(o.name.clone())));
        }
    }
    worst
}

fn obstacle_penetration(x: &Pose, scene: &Scene, obj: &ObjectModel) -> (f64, Option<Blocker>) {
    let mut worst = (0.0, None);
    for o in &scene.obstacles {
        let d = -box_separation(obj.cuboid(), x, &o.half_extents, &o.pose());
        if d > worst.0 {
            worst = (d, Some(Blocker::Obstacle(o.name.clone())));
        }
    }
    worst
}

/// Penetration of gripper fingertips into ground, wall slab, obstacles and the
/// object. Non-positive when clear.
fn finger_penetration(g: &GripperConfig, x: &Pose, scene: &Scene, obj: &ObjectModel) -> (f64, Option<Blocker>) {
    finger_penetration_opt(g, Some((x, obj)), scene)
}

fn finger_penetration_opt(
    g: &GripperConfig,
    object: Option<(&Pose, &ObjectModel)>,
    scene: &Scene,
) -> (f64, Option<Blocker>) {
    let mut worst = (0.0, None);
    let bump = |d: f64, b: Blocker, worst: &mut (f64, Option<Blocker>)| {
        if d > worst.0 {
            *worst = (d, Some(b));
        }
    };
    for p in finger_points(g, scene) {
        bump(-p.z, Blocker::Ground, &mut worst);
        if let Some(wall) = &scene.wall {
            if wall.spans(&p) && p.z < wall.height {
                let d = (p - wall.center()).dot(&wall.inward_normal());
                if d < 0.0 && d > -WALL_SLAB_THICKNESS {
                    bump((-d).min(WALL_SLAB_THICKNESS + d), Blocker::Wall, &mut worst);
                }
            }
        }
        for o in &scene.obstacles {
            bump(-o.half_extents.signed_distance(&o.pose(), &p), Blocker::Obstacle(o.name.clone()), &mut worst);
        }
        if let Some((x, obj)) = object {
            bump(-obj.cuboid().signed_distance(x, &p), Blocker::Object, &mut worst);
        }
    }
    worst
}

/// Largest `s` in [0, 1] for which `ok(s)` holds, assuming `ok(0)`.
fn bisect(ok: impl Fn(f64) -> bool) -> f64 {
    if ok(1.0) {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// First entry point of the ray `origin + s·dir` into the cuboid.
pub fn ray_box_entry(origin: &Vec3, dir: &Vec3, cuboid: &Cuboid, pose: &Pose) -> Option<Vec3> {
    let inv = pose.orientation.inverse();
    let o = inv * (origin - pose.position);
    let d = inv * dir;
    let h = cuboid.half();
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for k in 0..3 {
        if d[k].abs() < 1e-15 {
            if o[k].abs() > h[k] {
                return None;
            }
        } else {
            let a = (-h[k] - o[k]) / d[k];
            let b = (h[k] - o[k]) / d[k];
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
    }
    (t0 <= t1 && t1 >= 0.0).then(|| origin + dir * t0.max(0.0))
}

fn finger_env_penetration(g: &GripperConfig, scene: &Scene) -> (f64, Option<Blocker>) {
    finger_penetration_opt(g, None, scene)
}

fn worse(now: f64, before: f64) -> bool {
    now > before.max(CLIP_EPS)
}

struct Motion {
    x: Pose,
    g: GripperConfig,
    events: Vec<SimEvent>,
}

fn clipped(by: Option<Blocker>) -> Vec<SimEvent> {
    by.map(|by| vec![SimEvent::Clipped { by }]).unwrap_or_default()
}

fn attached_motion(x: &Pose, g: &GripperConfig, a: &Action, scene: &Scene, obj: &ObjectModel) -> Motion {
    let (p0, _) = object_penetration(x, scene, obj);
    let (f0, _) = finger_env_penetration(g, scene);
    let eval = |s: f64| {
        let (p, pb) = object_penetration(&carry(x, g, a, s, scene), scene, obj);
        let (f, fb) = finger_env_penetration(&apply_to_gripper(g, a, s, scene), scene);
        if worse(p, p0) {
            pb
        } else if worse(f, f0) {
            fb
        } else {
            None
        }
    };
    let s = bisect(|s| eval(s).is_none());
    Motion {
        x: carry(x, g, a, s, scene),
        g: apply_to_gripper(g, a, s, scene),
        events: if s < 1.0 { clipped(eval(1.0)) } else { vec![] },
    }
}

/// Rocking pivot: the object rotates about the wall tangent while its lowest
/// corner stays on the ground and its nearest corner stays on the wall. The
/// fingertip keeps its height and follows the far surface.
fn rock_motion(x: &Pose, g: &GripperConfig, a: &Action, scene: &Scene, obj: &ObjectModel) -> Option<Motion> {
    let wall = scene.wall.as_ref()?;
    let n = wall.inward_normal();
    let t = wall.tangent();
    let dtheta = a.rotation.dot(&t);
    let tip = g.tip_center(&scene.gripper);
    if dtheta.abs() < 1e-12 || a.translation != Vec3::zeros() || (tip - x.position).dot(&n) <= 0.0 {
        return None;
    }
    let orientation = rot_axis(&t, dtheta) * x.orientation;
    let mut y = Pose {
        position: x.position,
        orientation,
    };
    y.position.z -= ground_residual(&y, obj);
    let plane_d = corners(obj.cuboid(), &y)
        .iter()
        .map(|c| (c - wall.center()).dot(&n))
        .fold(f64::INFINITY, f64::min);
    y.position -= n * plane_d;
    let (o0, _) = obstacle_penetration(x, scene, obj);
    let (o1, ob) = obstacle_penetration(&y, scene, obj);
    if worse(o1, o0) {
        return Some(Motion {
            x: *x,
            g: *g,
            events: clipped(ob),
        });
    }
    let mut origin = y.position + n * 2.0;
    origin.z = tip.z;
    let new_tip = ray_box_entry(&origin, &(-n), obj.cuboid(), &y)?;
    Some(Motion {
        x: y,
        g: g.with_tip(new_tip, &scene.gripper),
        events: vec![],
    })
}

fn is_planar(a: &Action) -> bool {
    a.translation.z.abs() <= 1e-12 && a.rotation.x.abs() <= 1e-12 && a.rotation.y.abs() <= 1e-12
}

fn sticky_motion(x: &Pose, g: &GripperConfig, a: &Action, scene: &Scene, obj: &ObjectModel) -> Motion {
    let at = |s: f64| {
        let mut y = carry(x, g, a, s, scene);
        let mut h = apply_to_gripper(g, a, s, scene);
        let mut hit_wall = false;
        if let Some(wall) = &scene.wall {
            let c = wall_clearance(&y, obj, scene);
            if c < 0.0 {
                let push = wall.inward_normal() * (-c);
                y.position += push;
                h.pose.position += push;
                hit_wall = true;
            }
        }
        (y, h, hit_wall)
    };
    let (o0, _) = obstacle_penetration(x, scene, obj);
    let (f0, _) = finger_env_penetration(g, scene);
    let eval = |s: f64| {
        let (y, h, _) = at(s);
        let (o, ob) = obstacle_penetration(&y, scene, obj);
        let (f, fb) = finger_env_penetration(&h, scene);
        if worse(o, o0) {
            ob
        } else if worse(f, f0) {
            fb
        } else {
            None
        }
    };
    let s = bisect(|s| eval(s).is_none());
    let (y, h, hit_wall) = at(s);
    let mut events = if s < 1.0 { clipped(eval(1.0)) } else { vec![] };
    if hit_wall {
        events.push(SimEvent::Clipped { by: Blocker::Wall });
    }
    Motion { x: y, g: h, events }
}

fn free_motion(x: &Pose, g: &GripperConfig, a: &Action, scene: &Scene, obj: &ObjectModel) -> Motion {
    let (f0, _) = finger_penetration(g, x, scene, obj);
    let eval = |s: f64| {
        let (f, fb) = finger_penetration(&apply_to_gripper(g, a, s, scene), x, scene, obj);
        if worse(f, f0) {
            fb
        } else {
            None
        }
    };
    let s = bisect(|s| eval(s).is_none());
    Motion {
        x: *x,
        g: apply_to_gripper(g, a, s, scene),
        events: if s < 1.0 { clipped(eval(1.0)) } else { vec![] },
    }
}

/// Topple an unsupported object onto its nearest face and drop it to the
/// ground.
pub fn settle(x: &Pose, scene: &Scene, obj: &ObjectModel) -> Pose {
    let (_, axis) = most_vertical_axis(x);
    let target = if axis.z >= 0.0 { Vec3::z() } else { -Vec3::z() };
    let rot = UnitQuaternion::rotation_between(&axis, &target).unwrap_or_else(UnitQuaternion::identity);
    let lowest = corners(obj.cuboid(), x)
        .into_iter()
        .min_by(|a, b| a.z.total_cmp(&b.z))
        .expect("eight corners");
    let mut y = Pose::new(lowest + rot * (x.position - lowest), rot * x.orientation);
    y.position.z -= ground_residual(&y, obj);
    if let Some(wall) = &scene.wall {
        let c = wall_clearance(&y, obj, scene);
        if c < 0.0 {
            y.position += wall.inward_normal() * (-c);
        }
    }
    y
}

fn close_fingers(x: &Pose, g: &mut GripperConfig, delta: f64, scene: &Scene, obj: &ObjectModel) -> Option<SimEvent> {
    let target = (g.opening + delta).max(0.0);
    let center = g.tip_center(&scene.gripper);
    let axis = g.finger_axis();
    if obj.cuboid().signed_distance(x, &center) < 0.0 {
        // Fingers stop when the first one touches; an off-centre grasp leaves
        // the other finger short of the object.
        let off = (center - x.position).dot(&axis);
        let width = 2.0 * (obj.cuboid().support_radius(x, &axis) + off.abs());
        if target > width {
            g.opening = target;
            return None;
        }
        g.opening = width.min(g.opening);
        let aligned = (0..3).any(|k| (x.orientation * Vec3::ith(k, 1.0)).dot(&axis).abs() >= GRASP_ALIGN_TOL.cos());
        let centered = off.abs() <= PENETRATION_TOL;
        return Some(if aligned && centered { SimEvent::Attached } else { SimEvent::GraspFailed });
    }
    let trial = GripperConfig { opening: target, ..*g };
    let pinched = trial
        .fingertips(&scene.gripper)
        .iter()
        .any(|p| obj.cuboid().signed_distance(x, p) < -CLIP_EPS);
    if pinched {
        return Some(SimEvent::GraspFailed);
    }
    g.opening = target;
    None
}

pub fn step(state: &SimState, action: &Action, scene: &Scene, obj: &ObjectModel) -> Result<SimState, SimError> {
    step_with_events(state, action, scene, obj).map(|r| r.0)
}

pub fn step_with_events(
    state: &SimState,
    a: &Action,
    scene: &Scene,
    obj: &ObjectModel,
) -> Result<(SimState, Vec<SimEvent>), SimError> {
    if !a.within_bounds() {
        return Err(SimError::ActionOutOfBounds {
            translation: a.translation.norm(),
            rotation: a.rotation.norm(),
        });
    }
    let x = state.object_pose;
    let g = state.gripper;
    let mut attached = state.attached;
    let flags = contact_flags(&x, &g, attached, scene, obj);
    let moving = a.translation != Vec3::zeros() || a.rotation != Vec3::zeros();
    let mut m = Motion { x, g, events: vec![] };
    if moving {
        let closed = g.opening <= 1e-9;
        let tip = g.tip_center(&scene.gripper);
        m = if attached {
            attached_motion(&x, &g, a, scene, obj)
        } else if let Some(r) = (closed && flags.finger_object_side && flags.object_wall)
            .then(|| rock_motion(&x, &g, a, scene, obj))
            .flatten()
        {
            r
        } else if closed && (flags.finger_object_top || flags.finger_object_side) && is_planar(a) {
            let n = face_normal_at(obj.cuboid(), &x, &tip);
            let separating = !flags.finger_object_top && a.translation.dot(&n) > SEPARATION_TOL;
            if separating {
                free_motion(&x, &g, a, scene, obj)
            } else {
                sticky_motion(&x, &g, a, scene, obj)
            }
        } else {
            free_motion(&x, &g, a, scene, obj)
        };
    }
    let mut events = m.events;
    let mut g = m.g;
    let mut x = m.x;
    if a.finger > 0.0 {
        if attached {
            attached = false;
            events.push(SimEvent::Released);
        }
        let target = (g.opening + a.finger).min(scene.gripper.max_opening);
        let (f0, _) = finger_penetration(&g, &x, scene, obj);
        let at = |s: f64| GripperConfig {
            opening: g.opening + s * (target - g.opening),
            ..g
        };
        let s = bisect(|s| !worse(finger_penetration(&at(s), &x, scene, obj).0, f0));
        if s < 1.0 {
            events.extend(clipped(finger_penetration(&at(1.0), &x, scene, obj).1));
        }
        g = at(s);
    } else if a.finger < 0.0 && !attached {
        if let Some(e) = close_fingers(&x, &mut g, a.finger, scene, obj) {
            attached = e == SimEvent::Attached;
            events.push(e);
        }
    }
    let tip = g.tip_center(&scene.gripper);
    if !scene.gripper.workspace.contains(&tip, 1e-9) {
        return Err(SimError::WorkspaceViolation(tip.x, tip.y, tip.z));
    }
    let f = contact_flags(&x, &g, attached, scene, obj);
    if !attached && !f.finger_object_top && !f.finger_object_side && !is_freestanding(&x, obj, scene, RUNTIME_TOL) {
        let y = settle(&x, scene, obj);
        if y != x {
            // An object that would topple onto the fingers or into an
            // obstacle stays propped up; the step is refused.
            let (f0, _) = finger_penetration(&state.gripper, &state.object_pose, scene, obj);
            let (o0, _) = obstacle_penetration(&state.object_pose, scene, obj);
            let (f1, fb) = finger_penetration(&g, &y, scene, obj);
            let (o1, ob) = obstacle_penetration(&y, scene, obj);
            if worse(f1, f0) || worse(o1, o0) {
                let by = if worse(f1, f0) { fb } else { ob };
                let back = SimState::new(state.object_pose, state.gripper, state.attached, scene, obj);
                return Ok((back, clipped(by)));
            }
            x = y;
            events.push(SimEvent::Settled);
        }
    }
    Ok((SimState::new(x, g, attached, scene, obj), events))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "reason")]
pub enum Outcome {
    ReachedGoal,
    Timeout,
    Failure(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<SimState>,
    pub actions: Vec<Action>,
    pub events: Vec<(usize, SimEvent)>,
    pub outcome: Outcome,
}

impl Trajectory {
    pub fn last_state(&self) -> &SimState {
        self.states.last().expect("trajectory holds its start state")
    }
}

/// Run `policy` from `start` until the object enters `goal`, a failure
/// occurs, or `max_steps` actions have been taken.
pub fn rollout(
    policy: &mut dyn Policy,
    start: SimState,
    goal: &GoalRegion,
    scene: &Scene,
    obj: &ObjectModel,
    max_steps: usize,
) -> Trajectory {
    let mut traj = Trajectory {
        states: vec![start],
        actions: vec![],
        events: vec![],
        outcome: Outcome::Timeout,
    };
    for i in 0..max_steps {
        let state = traj.last_state().clone();
        if goal.contains(&state, scene, obj) {
            traj.outcome = Outcome::ReachedGoal;
            return traj;
        }
        let action = match policy.act(&state, goal, scene, obj) {
            Ok(a) => a,
            Err(e) => {
                traj.outcome = Outcome::Failure(e.to_string());
                return traj;
            }
        };
        let (next, events) = match step_with_events(&state, &action, scene, obj) {
            Ok(r) => r,
            Err(e) => {
                traj.outcome = Outcome::Failure(e.to_string());
                return traj;
            }
        };
        traj.actions.push(action);
        traj.states.push(next);
        let mut failure = None;
        for e in events {
            match &e {
                SimEvent::Clipped { by: Blocker::Obstacle(n) } => {
                    failure.get_or_insert(format!("blocked: obstacle '{n}'"));
                }
                SimEvent::GraspFailed => {
                    failure.get_or_insert("grasp failed".to_string());
                }
                _ => {}
            }
            traj.events.push((i, e));
        }
        if let Some(f) = failure {
            traj.outcome = Outcome::Failure(f);
            return traj;
        }
    }
    if goal.contains(traj.last_state(), scene, obj) {
        traj.outcome = Outcome::ReachedGoal;
    }
    traj
}

fn segment_blocked(a: &Vec3, b: &Vec3, opening: f64, g: &GripperConfig, x: Option<&Pose>, scene: &Scene, obj: &ObjectModel) -> Option<Blocker> {
    let n = ((b - a).norm() / 0.002).ceil().max(1.0) as usize;
    for k in 0..=n {
        let p = a + (b - a) * (k as f64 / n as f64);
        let probe = GripperConfig { opening, ..g.with_tip(p, &scene.gripper) };
        let (d, by) = match x {
            Some(x) => finger_penetration(&probe, x, scene, obj),
            None => finger_env_penetration(&probe, scene),
        };
        if d > CLIP_EPS {
            return by;
        }
    }
    None
}

/// Relocate the gripper: lift to the safe height, translate, descend onto
/// `target`. The object does not move.
pub fn move_robot_to(state: &SimState, target: &GripperConfig, scene: &Scene, obj: &ObjectModel) -> Result<SimState, SimError> {
    let m = &scene.gripper;
    let goal = target.tip_center(m);
    if goal.z < 0.0 {
        return Err(SimError::Unreachable(format!("target fingertip below ground (z = {:.4})", goal.z)));
    }
    if !m.workspace.contains(&goal, 1e-9) {
        return Err(SimError::Unreachable("target outside workspace".into()));
    }
    if state.attached {
        return Err(SimError::Unreachable("gripper is holding the object".into()));
    }
    if let Some(o) = scene.obstacles.iter().find(|o| o.height() >= SAFE_HEIGHT) {
        return Err(SimError::Unreachable(format!("obstacle '{}' is taller than the safe height", o.name)));
    }
    let start = state.gripper.tip_center(m);
    let up = Vec3::new(start.x, start.y, SAFE_HEIGHT.max(start.z));
    let over = Vec3::new(goal.x, goal.y, up.z);
    let g = &state.gripper;
    let checks = [
        (start, up, g.opening, g, None),
        (up, over, g.opening, g, None),
        (over, goal, target.opening, target, Some(&state.object_pose)),
    ];
    for (a, b, opening, cfg, x) in checks {
        if let Some(by) = segment_blocked(&a, &b, opening, cfg, x, scene, obj) {
            return Err(SimError::Unreachable(format!("relocation path blocked by {by}")));
        }
    }
    Ok(SimState::new(state.object_pose, *target, false, scene, obj))
}

/// One JSON value per line.
pub fn write_jsonl<T: Serialize>(items: &[T], mut w: impl std::io::Write) -> std::io::Result<()> {
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(r: impl std::io::BufRead) -> Result<Vec<T>, String> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?);
    }
    Ok(out)
}
