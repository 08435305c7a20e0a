//! Primitive library: contact requirements and scripted goal-conditioned
//! controllers for push, pull, pivot and grasp.

use std::collections::VecDeque;
use std::fmt;

use nalgebra::UnitQuaternion;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contact::{
    grasp_config, top_center, wall_clearance, ContactConfig, ContactError, EnvContact, RobotContact,
};
use crate::geometry::{rotation_vector_between, Pose, Vec3};
use crate::retarget::GoalRegion;
use crate::scene::{ObjectModel, Scene};
use crate::sim::{face_normal_at, Action, SimState, MAX_STEP_ROTATION, MAX_STEP_TRANSLATION};

/// Pivot gives up when the object drifts this far from the wall.
pub const LOST_CONTACT_DISTANCE: f64 = 0.005;
/// Push re-approaches from another face beyond this heading error.
pub const PUSH_HEADING_LIMIT: f64 = 15.0 * std::f64::consts::PI / 180.0;
/// Push yaw rate per step.
pub const PUSH_MAX_YAW: f64 = std::f64::consts::PI / 180.0;
/// Rotation left over when the pivot hands over to sliding.
pub const PIVOT_ANGLE_TOL: f64 = 1e-4;
/// Grasp approach and lift height.
pub const GRASP_LIFT: f64 = 0.10;
/// Finger closing rate per step.
pub const GRASP_CLOSE_STEP: f64 = 0.005;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrimitiveKind {
    Push,
    Pull,
    Pivot,
    Grasp,
}

impl PrimitiveKind {
    pub const ALL: [PrimitiveKind; 4] = [Self::Push, Self::Pull, Self::Pivot, Self::Grasp];
}

impl fmt::Display for PrimitiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Push => "push",
            Self::Pull => "pull",
            Self::Pivot => "pivot",
            Self::Grasp => "grasp",
        };
        f.write_str(s)
    }
}

pub fn required_contact(kind: PrimitiveKind) -> ContactConfig {
    use EnvContact::*;
    match kind {
        PrimitiveKind::Push => ContactConfig::new(&[Ground], RobotContact::None),
        PrimitiveKind::Pull => ContactConfig::new(&[Ground], RobotContact::Top),
        PrimitiveKind::Pivot => ContactConfig::new(&[Ground, Wall], RobotContact::Antipodal),
        PrimitiveKind::Grasp => ContactConfig::new(&[Ground], RobotContact::Grasp),
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("precondition: {0}")]
    Precondition(String),
    #[error("lost contact")]
    LostContact,
    #[error("plan exhausted")]
    PlanExhausted,
    #[error(transparent)]
    Contact(#[from] ContactError),
}

pub trait Policy {
    fn act(&mut self, state: &SimState, goal: &GoalRegion, scene: &Scene, obj: &ObjectModel) -> Result<Action, PolicyError>;
}

pub fn policy_for(kind: PrimitiveKind) -> Box<dyn Policy + Send> {
    match kind {
        PrimitiveKind::Push => Box::new(PushPolicy),
        PrimitiveKind::Pull => Box::new(PullPolicy::default()),
        PrimitiveKind::Pivot => Box::new(PivotPolicy),
        PrimitiveKind::Grasp => Box::new(GraspPolicy),
    }
}

fn horizontal(v: Vec3) -> Vec3 {
    Vec3::new(v.x, v.y, 0.0)
}

fn yaw_error(from: &Pose, to: &Pose) -> f64 {
    rotation_vector_between(&from.orientation, &to.orientation).z
}

/// Planar gripper action that carries a rigidly held object by `dp` and
/// `dyaw`, with the rotation taken about the fingertip.
fn carry_action(x: &Pose, tip: &Vec3, dp: Vec3, dyaw: f64, max_yaw: f64) -> Action {
    let f = (max_yaw / dyaw.abs().max(1e-300)).min(1.0);
    let yaw = dyaw * f;
    let r = x.position - tip;
    let swing = UnitQuaternion::from_axis_angle(&Vec3::z_axis(), yaw) * r - r;
    let mut t = horizontal(dp * f - swing);
    let n = t.norm();
    let mut scale = 1.0;
    if n > MAX_STEP_TRANSLATION {
        scale = MAX_STEP_TRANSLATION / n;
        t *= scale;
    }
    let yaw = if scale < 1.0 { dyaw * f * scale } else { yaw };
    Action {
        translation: t,
        rotation: Vec3::new(0.0, 0.0, yaw),
        finger: 0.0,
    }
}

/// Lift to `height`, move over `target`, then descend onto it. `None` once
/// the fingertip is at the target.
fn approach(tip: &Vec3, target: &Vec3, height: f64) -> Option<Action> {
    let lateral = horizontal(target - tip);
    if lateral.norm() > 1e-7 {
        if tip.z < height - 1e-9 {
            return Some(Action::toward(Vec3::new(0.0, 0.0, height - tip.z)));
        }
        return Some(Action::toward(lateral));
    }
    let dz = target.z - tip.z;
    (dz.abs() > 1e-9).then(|| Action::toward(Vec3::new(0.0, 0.0, dz)))
}

/// Height above which the gripper can move laterally without touching the
/// object, obstacles, or the wall.
fn travel_height(x: &Pose, scene: &Scene, obj: &ObjectModel) -> f64 {
    let mut h = top_center(x, obj).z;
    for o in &scene.obstacles {
        h = h.max(o.height());
    }
    if let Some(w) = &scene.wall {
        h = h.max(w.height);
    }
    h + 0.02
}

/// Scripted side push with sticky contact. The finger pushes the face whose
/// normal is most opposed to the goal direction.
pub struct PushPolicy;

impl PushPolicy {
    fn side_faces(x: &Pose, obj: &ObjectModel) -> Vec<(Vec3, f64)> {
        let h = obj.cuboid().half();
        let mut out = Vec::new();
        for k in 0..3 {
            let axis = x.orientation * Vec3::ith(k, 1.0);
            if axis.z.abs() < 0.5 {
                for s in [1.0, -1.0] {
                    out.push((horizontal(axis * s).normalize(), h[k]));
                }
            }
        }
        out
    }

    fn heading(n: &Vec3, dir: &Vec3) -> f64 {
        (-n).dot(dir).clamp(-1.0, 1.0).acos()
    }
}

impl Policy for PushPolicy {
    fn act(&mut self, state: &SimState, goal: &GoalRegion, scene: &Scene, obj: &ObjectModel) -> Result<Action, PolicyError> {
        if goal.contains(state, scene, obj) {
            return Ok(Action::zero());
        }
        let x = &state.object_pose;
        let m = &scene.gripper;
        let tip = state.gripper.tip_center(m);
        let dp = horizontal(goal.center.position - x.position);
        let dyaw = yaw_error(x, &goal.center);
        let dir = if dp.norm() > 1e-9 { dp.normalize() } else { Vec3::zeros() };
        let faces = Self::side_faces(x, obj);
        let best = faces
            .iter()
            .copied()
            .min_by(|a, b| Self::heading(&a.0, &dir).total_cmp(&Self::heading(&b.0, &dir)))
            .expect("four side faces");
        let flags = state.contact_flags;
        if flags.finger_object_side && state.gripper.opening <= 1e-9 {
            let n = horizontal(face_normal_at(obj.cuboid(), x, &tip));
            let n = if n.norm() > 1e-9 { n.normalize() } else { best.0 };
            if dp.norm() > 0.02 {
                let err = Self::heading(&n, &dir);
                if err > PUSH_HEADING_LIMIT && err - Self::heading(&best.0, &dir) > 10f64.to_radians() {
                    return Ok(Action::translate(Vec3::new(0.0, 0.0, MAX_STEP_TRANSLATION)));
                }
            }
            let mut a = carry_action(x, &tip, dp, dyaw, PUSH_MAX_YAW);
            let away = a.translation.dot(&n);
            if away > 0.0 {
                a.translation -= n * away;
            }
            return Ok(a);
        }
        let (n, half) = best;
        let contact = horizontal(x.position) + n * half + Vec3::z() * x.position.z;
        let pre = contact + n * 0.005;
        if let Some(a) = approach(&tip, &pre, travel_height(x, scene, obj)) {
            return Ok(a);
        }
        Ok(Action::toward(contact - tip))
    }
}

/// Open-loop drag from the top, planned on the first call.
#[derive(Default)]
pub struct PullPolicy {
    plan: Option<VecDeque<Action>>,
}

impl PullPolicy {
    /// Equal steps that carry the object from `x` to `goal` when held at `tip`.
    pub fn plan(x: &Pose, tip: &Vec3, goal: &Pose) -> VecDeque<Action> {
        let dp = horizontal(goal.position - x.position);
        let dyaw = yaw_error(x, goal);
        let n = (dp.norm() / MAX_STEP_TRANSLATION - 1e-9)
            .ceil()
            .max((dyaw.abs() / PUSH_MAX_YAW - 1e-9).ceil())
            .max(0.0) as usize;
        if n == 0 {
            return VecDeque::new();
        }
        let rot = UnitQuaternion::from_axis_angle(&Vec3::z_axis(), dyaw);
        let r0 = horizontal(x.position - tip);
        let t = (dp + r0 - rot * r0) / n as f64;
        let mut t = horizontal(t);
        // Rounding can push a saturated step a hair over the bound.
        if t.norm() > MAX_STEP_TRANSLATION {
            t *= MAX_STEP_TRANSLATION / t.norm();
        }
        let w = Vec3::new(0.0, 0.0, dyaw / n as f64);
        (0..n)
            .map(|_| Action {
                translation: t,
                rotation: w,
                finger: 0.0,
            })
            .collect()
    }
}

impl Policy for PullPolicy {
    fn act(&mut self, state: &SimState, goal: &GoalRegion, scene: &Scene, obj: &ObjectModel) -> Result<Action, PolicyError> {
        if self.plan.is_none() {
            if !state.contact_flags.finger_object_top {
                return Err(PolicyError::Precondition("top contact".into()));
            }
            let tip = state.gripper.tip_center(&scene.gripper);
            self.plan = Some(Self::plan(&state.object_pose, &tip, &goal.center));
        }
        if goal.contains(state, scene, obj) {
            return Ok(Action::zero());
        }
        self.plan
            .as_mut()
            .and_then(|p| p.pop_front())
            .ok_or(PolicyError::PlanExhausted)
    }
}

/// Rock the object upright against the wall with the fingertip on its far
/// side, then slide it along the wall from the top.
pub struct PivotPolicy;

impl Policy for PivotPolicy {
    fn act(&mut self, state: &SimState, goal: &GoalRegion, scene: &Scene, obj: &ObjectModel) -> Result<Action, PolicyError> {
        let wall = scene.wall.as_ref().ok_or_else(|| PolicyError::Precondition("wall".into()))?;
        if goal.contains(state, scene, obj) {
            return Ok(Action::zero());
        }
        let x = &state.object_pose;
        if wall_clearance(x, obj, scene) > LOST_CONTACT_DISTANCE {
            return Err(PolicyError::LostContact);
        }
        let t = wall.tangent();
        let remaining = rotation_vector_between(&x.orientation, &goal.center.orientation).dot(&t);
        let flags = state.contact_flags;
        let tip = state.gripper.tip_center(&scene.gripper);
        if remaining.abs() > PIVOT_ANGLE_TOL && !flags.finger_object_top {
            if !flags.finger_object_side {
                return Err(PolicyError::LostContact);
            }
            let step = remaining.clamp(-MAX_STEP_ROTATION, MAX_STEP_ROTATION);
            return Ok(Action::rotate(t * step));
        }
        let slide = t * t.dot(&(goal.center.position - x.position));
        if flags.finger_object_top {
            return Ok(Action::toward(slide));
        }
        let top = top_center(x, obj);
        match approach(&tip, &top, top.z + 0.02) {
            Some(a) => Ok(a),
            None => Ok(Action::toward(slide)),
        }
    }
}

/// Top-down grasp: open while rising, move over the grasp pose, descend,
/// close, then carry the object to the goal.
pub struct GraspPolicy;

impl Policy for GraspPolicy {
    fn act(&mut self, state: &SimState, goal: &GoalRegion, scene: &Scene, obj: &ObjectModel) -> Result<Action, PolicyError> {
        if goal.contains(state, scene, obj) {
            return Ok(Action::zero());
        }
        let x = &state.object_pose;
        let m = &scene.gripper;
        if state.attached {
            return Ok(Action::toward(goal.center.position - x.position));
        }
        let target = grasp_config(x, obj, m, scene)?;
        let g = &state.gripper;
        let tip = g.tip_center(m);
        let goal_tip = target.tip_center(m);
        let spin = rotation_vector_between(&g.pose.orientation, &target.pose.orientation);
        let aligned = spin.norm() <= 1e-9;
        let over = horizontal(goal_tip - tip).norm() <= 1e-7;
        if over && aligned && (tip.z - goal_tip.z).abs() <= 1e-9 && g.opening >= target.opening - 1e-9 {
            return Ok(Action::fingers(-GRASP_CLOSE_STEP));
        }
        let hover = goal_tip.z + GRASP_LIFT;
        if g.opening < target.opening - 1e-9 {
            let mut a = Action::fingers((target.opening - g.opening).min(GRASP_CLOSE_STEP));
            if tip.z < hover {
                a.translation = Vec3::new(0.0, 0.0, (hover - tip.z).min(MAX_STEP_TRANSLATION));
            }
            return Ok(a);
        }
        if !(over && aligned) && tip.z < hover - 1e-9 {
            return Ok(Action::toward(Vec3::new(0.0, 0.0, hover - tip.z)));
        }
        if !aligned {
            let n = spin.norm();
            return Ok(Action::rotate(if n > MAX_STEP_ROTATION { spin * (MAX_STEP_ROTATION / n) } else { spin }));
        }
        match approach(&tip, &goal_tip, hover) {
            Some(a) => Ok(a),
            None => Ok(Action::fingers(-GRASP_CLOSE_STEP)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contact::{EnvContact, GripperConfig};
    use std::f64::consts::FRAC_PI_2;
    use crate::scene::Wall;
    use crate::sim::{move_robot_to, rollout, Outcome};
    use crate::templates::{place_against, tipped};

    fn setup() -> (Scene, ObjectModel, Pose) {
        let scene = Scene::new(Some(Wall::new(0.75, 0.0)), vec![]);
        let obj = ObjectModel::new("box", 0.1, 0.075, 0.03);
        let x = obj.resting_pose(0.45, 0.0, 0.0);
        (scene, obj, x)
    }

    fn state_at(x: Pose, tip: Vec3, scene: &Scene, obj: &ObjectModel) -> SimState {
        let g = GripperConfig::top_down(tip, 0.0, 0.0, &scene.gripper);
        SimState::new(x, g, false, scene, obj)
    }

    #[test]
    fn contact_table() {
        use EnvContact::*;
        let expect = [
            (PrimitiveKind::Push, vec![Ground], RobotContact::None),
            (PrimitiveKind::Pull, vec![Ground], RobotContact::Top),
            (PrimitiveKind::Pivot, vec![Ground, Wall], RobotContact::Antipodal),
            (PrimitiveKind::Grasp, vec![Ground], RobotContact::Grasp),
        ];
        for (k, env, robot) in expect {
            assert_eq!(required_contact(k), ContactConfig::new(&env, robot), "{k}");
        }
    }

    #[test]
    fn push_in_contact_steps_toward_goal() {
        let (scene, obj, x) = setup();
        let s = state_at(x, Vec3::new(0.35, 0.0, 0.03), &scene, &obj);
        let goal = GoalRegion::ball(obj.resting_pose(0.65, 0.0, 0.0));
        let a = PushPolicy.act(&s, &goal, &scene, &obj).unwrap();
        assert!((a.translation - Vec3::new(0.005, 0.0, 0.0)).norm() < 1e-12);
        assert!(a.rotation.norm() < 1e-12);
    }

    #[test]
    fn push_inside_goal_is_idle() {
        let (scene, obj, x) = setup();
        let s = state_at(x, Vec3::new(0.35, 0.0, 0.03), &scene, &obj);
        let a = PushPolicy.act(&s, &GoalRegion::ball(x), &scene, &obj).unwrap();
        assert!(a.is_zero());
    }

    #[test]
    fn push_retracts_when_goal_is_behind() {
        let (scene, obj, x) = setup();
        let s = state_at(x, Vec3::new(0.35, 0.0, 0.03), &scene, &obj);
        let goal = GoalRegion::ball(obj.resting_pose(0.25, 0.0, 0.0));
        let a = PushPolicy.act(&s, &goal, &scene, &obj).unwrap();
        assert_eq!(a, Action::translate(Vec3::new(0.0, 0.0, MAX_STEP_TRANSLATION)));
    }

    #[test]
    fn pull_plan_is_equal_steps() {
        let (_, _, x) = setup();
        let tip = x.position + Vec3::new(0.0, 0.0, 0.03);
        let goal = Pose {
            position: x.position - Vec3::new(0.1, 0.0, 0.0),
            ..x
        };
        let plan = PullPolicy::plan(&x, &tip, &goal);
        assert_eq!(plan.len(), 20);
        for a in &plan {
            assert!((a.translation - Vec3::new(-0.005, 0.0, 0.0)).norm() < 1e-12);
            assert!(a.rotation.norm() < 1e-15);
        }
        assert!(PullPolicy::plan(&x, &tip, &x).is_empty());
    }

    #[test]
    fn pull_without_top_contact_is_a_precondition_error() {
        let (scene, obj, x) = setup();
        let s = SimState::parked(x, &scene, &obj);
        let err = PullPolicy::default()
            .act(&s, &GoalRegion::ball(obj.resting_pose(0.3, 0.0, 0.0)), &scene, &obj)
            .unwrap_err();
        assert!(matches!(err, PolicyError::Precondition(_)));
    }

    #[test]
    fn pivot_needs_a_wall() {
        let (mut scene, obj, _) = setup();
        let x = obj.resting_pose(0.65, 0.0, 0.0);
        let s = state_at(x, Vec3::new(0.55, 0.0, 0.02), &scene, &obj);
        let up = place_against(scene.wall.as_ref().unwrap(), tipped(scene.wall.as_ref().unwrap(), FRAC_PI_2), 0.0, 0.0, &obj);
        scene.wall = None;
        let err = PivotPolicy.act(&s, &GoalRegion::ball(up), &scene, &obj).unwrap_err();
        assert_eq!(err.to_string(), "precondition: wall");
    }

    #[test]
    fn pivot_in_goal_is_idle() {
        let (scene, obj, _) = setup();
        let w = scene.wall.as_ref().unwrap();
        let up = place_against(w, tipped(w, FRAC_PI_2), 0.0, 0.0, &obj);
        let s = SimState::parked(up, &scene, &obj);
        assert!(PivotPolicy.act(&s, &GoalRegion::ball(up), &scene, &obj).unwrap().is_zero());
    }

    #[test]
    fn grasp_lifts_upright_box_with_gap() {
        let (scene, obj, _) = setup();
        let w = scene.wall.as_ref().unwrap();
        let up = place_against(w, tipped(w, FRAC_PI_2), 0.0, 0.03, &obj);
        let mut lifted = up;
        lifted.position.z += 0.10;
        let goal = GoalRegion {
            require_attached: true,
            ..GoalRegion::ball(lifted)
        };
        let q = grasp_config(&up, &obj, &scene.gripper, &scene).unwrap();
        let s = move_robot_to(&SimState::parked(up, &scene, &obj), &q, &scene, &obj).unwrap();
        let t = rollout(&mut GraspPolicy, s, &goal, &scene, &obj, 2000);
        assert_eq!(t.outcome, Outcome::ReachedGoal);
        let end = t.last_state();
        assert!(end.attached);
        assert!((end.object_pose.position.z - up.position.z - 0.10).abs() <= 0.01);
        assert!(GraspPolicy.act(end, &goal, &scene, &obj).unwrap().is_zero());
    }
}
