//! Goal construction: remapping demo switch poses into the test scene and
//! projecting them onto the contact requirements of adjacent primitives.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contact::{
    antipodal_satisfied, corners_wall_distances, env_intersection, freestanding_residual, grasp_config,
    ground_residual, is_freestanding, most_vertical_axis, satisfies_env, top_center, top_contact, wall_residual,
    ContactConfig, ContactError, EnvContact, GripperConfig, ANTIPODAL_HALF_ANGLE, RUNTIME_TOL,
};
use crate::geometry::{box_separation, compose, quaternion_distance, relative_transform, Pose, Vec3};
use crate::primitives::{required_contact, PrimitiveKind};
use crate::scene::{ObjectModel, Scene};
use crate::sim::SimState;
use crate::solver::{pose_distance_residual, solve_feasible, solve_pose, ConstraintSystem, SolverConfig};

pub const DEFAULT_POS_RADIUS: f64 = 0.01;
pub const DEFAULT_ANG_RADIUS: f64 = 5.0 * std::f64::consts::PI / 180.0;
/// Weight of the orientation term in the goal projection objective.
pub const ORIENTATION_WEIGHT: f64 = 1e-3;
/// Height of the push standoff above the object's top.
pub const PUSH_STANDOFF: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetargetError {
    #[error("switch {index}: infeasible ({reason})")]
    Infeasible { index: usize, reason: String },
    #[error(transparent)]
    Contact(#[from] ContactError),
    #[error("invalid demo: {0}")]
    InvalidDemo(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Keyframe {
    pub t: f64,
    #[serde(flatten)]
    pub pose: Pose,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Demo {
    pub scene: Scene,
    pub object: ObjectModel,
    pub keyframes: Vec<Keyframe>,
    pub labels: Vec<PrimitiveKind>,
    pub switch_indices: Vec<usize>,
    pub final_goal: Pose,
}

impl Demo {
    pub fn from_json(text: &str) -> Result<Self, RetargetError> {
        let demo: Demo = serde_json::from_str(text).map_err(|e| RetargetError::InvalidDemo(e.to_string()))?;
        demo.check_schema()?;
        Ok(demo)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("demo serializes")
    }

    /// Structural consistency of labels, switch indices and keyframes.
    pub fn check_schema(&self) -> Result<(), RetargetError> {
        let bad = |m: String| Err(RetargetError::InvalidDemo(m));
        if self.labels.is_empty() {
            return bad("no primitive labels".into());
        }
        if self.labels.len() != self.switch_indices.len() + 1 {
            return bad(format!(
                "{} labels require {} switch indices, found {}",
                self.labels.len(),
                self.labels.len() - 1,
                self.switch_indices.len()
            ));
        }
        if self.keyframes.is_empty() {
            return bad("no keyframes".into());
        }
        let mut last = 0;
        for &i in &self.switch_indices {
            if i >= self.keyframes.len() {
                return bad(format!("switch index {i} out of range"));
            }
            if i <= last {
                return bad("switch indices must be strictly increasing and after the first keyframe".into());
            }
            last = i;
        }
        if self.keyframes.windows(2).any(|w| w[1].t.partial_cmp(&w[0].t) != Some(std::cmp::Ordering::Greater)) {
            return bad("keyframe times must increase".into());
        }
        if !self.object.cuboid().is_valid() {
            return bad("object half extents must be positive".into());
        }
        Ok(())
    }

    pub fn switch_poses(&self) -> Vec<Pose> {
        self.switch_indices.iter().map(|&i| self.keyframes[i].pose).collect()
    }

    /// Start pose, every switch pose, and the final pose.
    pub fn anchors(&self) -> Vec<Pose> {
        let mut out = vec![self.keyframes[0].pose];
        out.extend(self.switch_poses());
        out.push(self.final_goal);
        out
    }
}

/// Ball around a pose, optionally tied to contact requirements that must hold
/// at runtime tolerance for membership.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalRegion {
    pub center: Pose,
    pub pos_radius: f64,
    pub ang_radius: f64,
    #[serde(default)]
    pub require_env: BTreeSet<EnvContact>,
    #[serde(default)]
    pub require_freestanding: bool,
    #[serde(default)]
    pub require_attached: bool,
}

impl GoalRegion {
    pub fn ball(center: Pose) -> Self {
        Self {
            center,
            pos_radius: DEFAULT_POS_RADIUS,
            ang_radius: DEFAULT_ANG_RADIUS,
            require_env: BTreeSet::new(),
            require_freestanding: false,
            require_attached: false,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.pos_radius > 0.0 && self.ang_radius > 0.0
    }

    pub fn contains_pose(&self, x: &Pose) -> bool {
        (x.position - self.center.position).norm() <= self.pos_radius
            && quaternion_distance(&x.orientation, &self.center.orientation) <= self.ang_radius
    }

    pub fn contains(&self, state: &SimState, scene: &Scene, obj: &ObjectModel) -> bool {
        let x = &state.object_pose;
        self.contains_pose(x)
            && (!self.require_attached || state.attached)
            && satisfies_env(x, &self.require_env, scene, obj, RUNTIME_TOL)
            && (!self.require_freestanding || is_freestanding(x, obj, scene, RUNTIME_TOL))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalSequence {
    pub goals: Vec<GoalRegion>,
}

/// Test-scene guesses for every switch and the final pose, chaining the demo's
/// relative transforms from `x0`.
pub fn remap_x(demo: &Demo, x0: &Pose) -> Vec<Pose> {
    let anchors = demo.anchors();
    let mut out = Vec::with_capacity(anchors.len() - 1);
    let mut cur = *x0;
    for w in anchors.windows(2) {
        // Stationary segments keep the guess bit-exact.
        if w[0] != w[1] {
            cur = compose(&relative_transform(&w[0], &w[1]), &cur);
        }
        out.push(cur);
    }
    out
}

/// Constraint system for a switch pose between two configurations.
pub fn switch_constraints<'a>(
    env: &BTreeSet<EnvContact>,
    scene: &'a Scene,
    obj: &'a ObjectModel,
    vertical_axis: usize,
) -> Result<ConstraintSystem<'a, Pose>, ContactError> {
    let mut cs = ConstraintSystem::new()
        .eq(move |x: &Pose| vec![ground_residual(x, obj)])
        .eq(move |x: &Pose| freestanding_residual(x, vertical_axis).to_vec());
    if env.contains(&EnvContact::Wall) {
        if scene.wall.is_none() {
            return Err(ContactError::MissingWall);
        }
        cs = cs.eq(move |x: &Pose| wall_residual(x, obj, scene).map(|r| r.to_vec()).unwrap_or(vec![f64::NAN; 2]));
    }
    if scene.wall.is_some() {
        cs = cs.ineq(move |x: &Pose| corners_wall_distances(x, obj, scene));
    }
    for o in &scene.obstacles {
        cs = cs.ineq(move |x: &Pose| vec![box_separation(obj.cuboid(), x, &o.half_extents, &o.pose())]);
    }
    let ws = scene.gripper.workspace;
    cs = cs.ineq(move |x: &Pose| {
        vec![
            x.position.x - ws.min[0],
            ws.max[0] - x.position.x,
            x.position.y - ws.min[1],
            ws.max[1] - x.position.y,
        ]
    });
    Ok(cs)
}

/// Nearest pose to `guess` meeting both configurations' environment contacts
/// and resting freestanding.
pub fn retarget_x(
    sigma_i: &ContactConfig,
    sigma_next: &ContactConfig,
    scene: &Scene,
    obj: &ObjectModel,
    guess: &Pose,
    cfg: &SolverConfig,
) -> Result<GoalRegion, RetargetError> {
    let env = env_intersection(sigma_i, sigma_next);
    let infeasible = |reason: String| RetargetError::Infeasible { index: 0, reason };
    let axis = most_vertical_axis(guess).0;
    let cs = switch_constraints(&env, scene, obj, axis)?;
    let objective = pose_distance_residual(*guess, ORIENTATION_WEIGHT);
    let center = solve_pose(&objective, &cs, *guess, cfg).map_err(|e| infeasible(e.to_string()))?;
    if !satisfies_env(&center, &env, scene, obj, cfg.tol) || !is_freestanding(&center, obj, scene, cfg.tol) {
        return Err(infeasible("solution failed the contact recheck".into()));
    }
    Ok(GoalRegion {
        require_env: env,
        require_freestanding: true,
        ..GoalRegion::ball(center)
    })
}

/// Gripper configuration realising the robot contact of `next` on the object
/// at `x`.
pub fn retarget_q(
    x: &Pose,
    next: PrimitiveKind,
    scene: &Scene,
    obj: &ObjectModel,
    cfg: &SolverConfig,
) -> Result<GripperConfig, RetargetError> {
    let m = &scene.gripper;
    match next {
        PrimitiveKind::Push => {
            let tip = top_center(x, obj) + Vec3::z() * PUSH_STANDOFF;
            if !m.workspace.contains(&tip, 1e-9) {
                return Err(ContactError::Unreachable("push standoff outside workspace".into()).into());
            }
            Ok(GripperConfig::top_down(tip, x.yaw(), 0.0, m))
        }
        PrimitiveKind::Pull => Ok(top_contact(x, obj, m)?),
        PrimitiveKind::Grasp => Ok(grasp_config(x, obj, m, scene)?),
        PrimitiveKind::Pivot => {
            let wall = scene.wall.as_ref().ok_or(ContactError::MissingWall)?;
            let n = wall.inward_normal();
            let reach = obj.cuboid().support_radius(x, &n);
            let low = ground_residual(x, obj);
            let mut tip = x.position + n * reach;
            tip.z = (0.5 * (x.position.z + low)).max(low + 0.005);
            let seed = GripperConfig::top_down(tip, wall.yaw(), 0.0, m);
            antipodal_solve(x, scene, obj, seed, cfg)
        }
    }
}

/// Antipodal contact from an arbitrary seed configuration.
pub fn antipodal_solve(
    x: &Pose,
    scene: &Scene,
    obj: &ObjectModel,
    seed: GripperConfig,
    cfg: &SolverConfig,
) -> Result<GripperConfig, RetargetError> {
    let wall = scene.wall.as_ref().ok_or(ContactError::MissingWall)?;
    let n = wall.inward_normal();
    let m = &scene.gripper;
    let x = *x;
    let low = ground_residual(&x, obj);
    let mut cs = ConstraintSystem::new()
        .eq(move |g: &GripperConfig| vec![obj.cuboid().signed_distance(&x, &g.tip_center(m))])
        .eq(|g: &GripperConfig| {
            let a = g.approach();
            vec![a.x, a.y, g.opening]
        })
        .ineq(move |g: &GripperConfig| {
            let r = g.tip_center(m) - x.position;
            let angle = r.cross(&n).norm().atan2(r.dot(&n));
            let tip = g.tip_center(m);
            vec![ANTIPODAL_HALF_ANGLE - angle, x.position.z - tip.z, tip.z - low - 0.005]
        });
    for o in &scene.obstacles {
        cs = cs.ineq(move |g: &GripperConfig| vec![o.half_extents.signed_distance(&o.pose(), &g.tip_center(m))]);
    }
    let g = solve_feasible(&cs, seed, cfg).map_err(|e| RetargetError::Infeasible {
        index: 0,
        reason: format!("antipodal contact: {e}"),
    })?;
    if !antipodal_satisfied(&g, &x, obj, scene, cfg.tol) {
        return Err(RetargetError::Infeasible {
            index: 0,
            reason: "antipodal contact failed the recheck".into(),
        });
    }
    Ok(g)
}

/// Retargeted goals for every switch of the demo, in order. Each guess
/// applies the demo's relative transform to the previous retargeted goal, so
/// corrections made at one switch carry into the next.
pub fn build_switch_goals(
    demo: &Demo,
    scene: &Scene,
    obj: &ObjectModel,
    x0: &Pose,
    cfg: &SolverConfig,
) -> Result<Vec<GoalRegion>, RetargetError> {
    let anchors = demo.anchors();
    let n = demo.labels.len();
    let mut prev = *x0;
    let mut goals = Vec::with_capacity(n - 1);
    for i in 0..n - 1 {
        let guess = compose(&relative_transform(&anchors[i], &anchors[i + 1]), &prev);
        let g = retarget_x(
            &required_contact(demo.labels[i]),
            &required_contact(demo.labels[i + 1]),
            scene,
            obj,
            &guess,
            cfg,
        )
        .map_err(|e| match e {
            RetargetError::Infeasible { reason, .. } => RetargetError::Infeasible { index: i + 1, reason },
            other => other,
        })?;
        prev = g.center;
        goals.push(g);
    }
    Ok(goals)
}

pub fn build_goal_sequence(
    demo: &Demo,
    scene: &Scene,
    obj: &ObjectModel,
    x0: &Pose,
    final_goal: GoalRegion,
    cfg: &SolverConfig,
) -> Result<GoalSequence, RetargetError> {
    let mut goals = build_switch_goals(demo, scene, obj, x0, cfg)?;
    goals.push(final_goal);
    Ok(GoalSequence { goals })
}

/// Goals centred on the raw remapped guesses. They keep the contact
/// requirements of a retargeted goal, so a guess that misses them is an
/// unreachable goal.
pub fn ablated_switch_goals(demo: &Demo, x0: &Pose) -> Vec<GoalRegion> {
    let guesses = remap_x(demo, x0);
    (0..demo.labels.len() - 1)
        .map(|i| GoalRegion {
            require_env: env_intersection(&required_contact(demo.labels[i]), &required_contact(demo.labels[i + 1])),
            require_freestanding: true,
            ..GoalRegion::ball(guesses[i])
        })
        .collect()
}
