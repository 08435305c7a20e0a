//! Semantic contact requirements and their realisation as residuals and
//! predicates on object and gripper states.

use std::collections::BTreeSet;
use std::f64::consts::{FRAC_PI_6, PI};
use std::fmt;

use nalgebra::UnitQuaternion;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{box_separation, corners, rot_z, signed_distance_point_plane, Pose, Vec3};
use crate::scene::{GripperModel, ObjectModel, Scene, Wall};

/// Tolerance for solver post-checks, meters.
pub const SOLVER_TOL: f64 = 1e-6;
/// Tolerance for contact predicates evaluated on simulated states, meters.
pub const RUNTIME_TOL: f64 = 1e-3;
/// Half-angle of the antipodal cone about the wall normal.
pub const ANTIPODAL_HALF_ANGLE: f64 = FRAC_PI_6;
/// Extra opening beyond the grasped thickness.
pub const GRASP_MARGIN: f64 = 0.004;
/// How far below the top face the fingertips close.
pub const GRASP_DEPTH: f64 = 0.02;
/// A face counts as the support face when within this angle of horizontal.
pub const FREESTANDING_ANGLE: f64 = 2.0 * PI / 180.0;
/// Centroid must project this far inside the support face.
pub const SUPPORT_MARGIN: f64 = 0.001;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContactError {
    #[error("scene has no wall")]
    MissingWall,
    #[error("unreachable: {0}")]
    Unreachable(String),
    #[error("no graspable thickness: thinnest horizontal side {thickness:.4} m exceeds the opening")]
    TooWide { thickness: f64 },
    #[error("no clearance between wall and finger: gap {gap:.4} m")]
    NoClearance { gap: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvContact {
    Ground,
    Wall,
}

impl fmt::Display for EnvContact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvContact::Ground => write!(f, "ground"),
            EnvContact::Wall => write!(f, "wall"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RobotContact {
    None,
    Top,
    Antipodal,
    Grasp,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContactConfig {
    pub env: BTreeSet<EnvContact>,
    pub robot: RobotContact,
}

impl ContactConfig {
    pub fn new(env: &[EnvContact], robot: RobotContact) -> Self {
        Self {
            env: env.iter().copied().collect(),
            robot,
        }
    }
}

/// Union of the environment requirements of two adjacent configurations: a
/// switch state must lie in both sets.
pub fn env_intersection(a: &ContactConfig, b: &ContactConfig) -> BTreeSet<EnvContact> {
    a.env.union(&b.env).copied().collect()
}

/// End-effector pose plus finger opening. The end-effector z axis is the
/// approach direction and its y axis the opening axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GripperConfig {
    pub pose: Pose,
    pub opening: f64,
}

impl GripperConfig {
    /// Top-down gripper whose fingertip centre sits at `tip`, opening axis
    /// rotated by `yaw` about world z.
    pub fn top_down(tip: Vec3, yaw: f64, opening: f64, model: &GripperModel) -> Self {
        let orientation = rot_z(yaw) * UnitQuaternion::from_axis_angle(&Vec3::x_axis(), PI);
        let position = tip - orientation * Vec3::new(0.0, 0.0, model.finger_length);
        Self {
            pose: Pose::new(position, orientation),
            opening,
        }
    }

    /// Midpoint between the two fingertips.
    pub fn tip_center(&self, model: &GripperModel) -> Vec3 {
        self.pose
            .transform_point(&Vec3::new(0.0, 0.0, model.finger_length))
    }

    pub fn fingertips(&self, model: &GripperModel) -> [Vec3; 2] {
        let half = self.opening / 2.0;
        [
            self.pose
                .transform_point(&Vec3::new(0.0, half, model.finger_length)),
            self.pose
                .transform_point(&Vec3::new(0.0, -half, model.finger_length)),
        ]
    }

    pub fn finger_axis(&self) -> Vec3 {
        self.pose.orientation * Vec3::y()
    }

    pub fn approach(&self) -> Vec3 {
        self.pose.orientation * Vec3::z()
    }

    /// Same gripper moved so its fingertip centre lands on `tip`.
    pub fn with_tip(&self, tip: Vec3, model: &GripperModel) -> Self {
        let position = tip - self.pose.orientation * Vec3::new(0.0, 0.0, model.finger_length);
        Self {
            pose: Pose {
                position,
                orientation: self.pose.orientation,
            },
            opening: self.opening,
        }
    }
}

/// Lowest corner height. Zero when resting on the ground, negative when
/// penetrating.
pub fn ground_residual(x: &Pose, obj: &ObjectModel) -> f64 {
    corners(obj.cuboid(), x)
        .iter()
        .map(|c| c.z)
        .fold(f64::INFINITY, f64::min)
}

/// Indices of the four vertices nearest the wall, then the two lowest of those.
fn lower_wall_edge(x: &Pose, obj: &ObjectModel, wall: &Wall) -> [(Vec3, f64); 2] {
    let plane = wall.plane();
    let mut verts: Vec<(Vec3, f64)> = corners(obj.cuboid(), x)
        .iter()
        .map(|c| (*c, signed_distance_point_plane(c, &plane)))
        .collect();
    verts.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut near: Vec<(Vec3, f64)> = verts[..4].to_vec();
    near.sort_by(|a, b| a.0.z.total_cmp(&b.0.z));
    [near[0], near[1]]
}

/// Signed distances of the object's lower wall-side edge to the wall plane.
pub fn wall_residual(x: &Pose, obj: &ObjectModel, scene: &Scene) -> Result<[f64; 2], ContactError> {
    let wall = scene.wall.as_ref().ok_or(ContactError::MissingWall)?;
    let edge = lower_wall_edge(x, obj, wall);
    Ok([edge[0].1, edge[1].1])
}

/// Smallest signed distance of any vertex within the wall span to the wall
/// plane; `+∞` when there is no wall.
pub fn wall_clearance(x: &Pose, obj: &ObjectModel, scene: &Scene) -> f64 {
    let Some(wall) = &scene.wall else {
        return f64::INFINITY;
    };
    let plane = wall.plane();
    corners(obj.cuboid(), x)
        .iter()
        .filter(|c| wall.spans(c))
        .map(|c| signed_distance_point_plane(c, &plane))
        .fold(f64::INFINITY, f64::min)
}

/// Signed wall distance of every vertex, with vertices outside the wall span
/// reported as clear.
pub fn corners_wall_distances(x: &Pose, obj: &ObjectModel, scene: &Scene) -> Vec<f64> {
    let Some(wall) = &scene.wall else {
        return vec![1.0; 8];
    };
    let plane = wall.plane();
    corners(obj.cuboid(), x)
        .iter()
        .map(|c| if wall.spans(c) { signed_distance_point_plane(c, &plane) } else { 1.0 })
        .collect()
}

pub fn satisfies_env(
    x: &Pose,
    sigma_x: &BTreeSet<EnvContact>,
    scene: &Scene,
    obj: &ObjectModel,
    tol: f64,
) -> bool {
    env_violation(x, sigma_x, scene, obj, tol).is_none()
}

/// The first unmet environment requirement together with its residual.
pub fn env_violation(
    x: &Pose,
    sigma_x: &BTreeSet<EnvContact>,
    scene: &Scene,
    obj: &ObjectModel,
    tol: f64,
) -> Option<(EnvContact, f64)> {
    if sigma_x.is_empty() {
        return None;
    }
    let g = ground_residual(x, obj);
    if g < -tol || (sigma_x.contains(&EnvContact::Ground) && g.abs() > tol) {
        return Some((EnvContact::Ground, g));
    }
    if sigma_x.contains(&EnvContact::Wall) {
        match wall_residual(x, obj, scene) {
            Err(_) => return Some((EnvContact::Wall, f64::INFINITY)),
            Ok(r) => {
                let worst = if r[0].abs() >= r[1].abs() { r[0] } else { r[1] };
                if worst.abs() > tol {
                    return Some((EnvContact::Wall, worst));
                }
            }
        }
    }
    let w = wall_clearance(x, obj, scene);
    if w < -tol {
        return Some((EnvContact::Wall, w));
    }
    None
}

/// Ground or wall penetration beyond `tol`, ignoring contact requirements.
pub fn penetration_violation(x: &Pose, scene: &Scene, obj: &ObjectModel, tol: f64) -> Option<(EnvContact, f64)> {
    let g = ground_residual(x, obj);
    if g < -tol {
        return Some((EnvContact::Ground, g));
    }
    let w = wall_clearance(x, obj, scene);
    (w < -tol).then_some((EnvContact::Wall, w))
}

/// Body axis (index, world direction) closest to vertical.
pub fn most_vertical_axis(x: &Pose) -> (usize, Vec3) {
    (0..3)
        .map(|k| (k, x.orientation * Vec3::ith(k, 1.0)))
        .max_by(|a, b| a.1.z.abs().total_cmp(&b.1.z.abs()))
        .expect("three axes")
}

/// The two body axes that are not the most vertical one, world frame, with
/// their half extents.
pub fn horizontal_axes(x: &Pose, obj: &ObjectModel) -> [(Vec3, f64); 2] {
    let (v, _) = most_vertical_axis(x);
    let h = obj.cuboid().half();
    let mut out = [(Vec3::zeros(), 0.0); 2];
    let mut i = 0;
    for k in 0..3 {
        if k != v {
            out[i] = (x.orientation * Vec3::ith(k, 1.0), h[k]);
            i += 1;
        }
    }
    out
}

/// Centre of the four highest vertices.
pub fn top_center(x: &Pose, obj: &ObjectModel) -> Vec3 {
    let mut c = corners(obj.cuboid(), x).to_vec();
    c.sort_by(|a, b| b.z.total_cmp(&a.z));
    (c[0] + c[1] + c[2] + c[3]) / 4.0
}

/// Closed-finger contact on the centre of the object's top.
pub fn top_contact(x: &Pose, obj: &ObjectModel, gripper: &GripperModel) -> Result<GripperConfig, ContactError> {
    let tip = top_center(x, obj);
    if !gripper.workspace.contains(&tip, 1e-9) {
        return Err(ContactError::Unreachable(format!(
            "top contact point ({:.3}, {:.3}, {:.3}) outside workspace",
            tip.x, tip.y, tip.z
        )));
    }
    Ok(GripperConfig::top_down(tip, x.yaw(), 0.0, gripper))
}

/// `(distance, cone_angle)` of the fingertip centre relative to the object
/// surface and the antipodal cone around the wall normal.
pub fn antipodal_residuals(
    g: &GripperConfig,
    x: &Pose,
    obj: &ObjectModel,
    scene: &Scene,
) -> Result<(f64, f64), ContactError> {
    let wall = scene.wall.as_ref().ok_or(ContactError::MissingWall)?;
    let tip = g.tip_center(&scene.gripper);
    let distance = obj.cuboid().signed_distance(x, &tip);
    let axis = wall.inward_normal();
    let r = tip - x.position;
    let cone_angle = if r.norm() < 1e-12 {
        0.0
    } else {
        r.cross(&axis).norm().atan2(r.dot(&axis))
    };
    Ok((distance, cone_angle))
}

pub fn antipodal_satisfied(
    g: &GripperConfig,
    x: &Pose,
    obj: &ObjectModel,
    scene: &Scene,
    tol: f64,
) -> bool {
    match antipodal_residuals(g, x, obj, scene) {
        Ok((d, a)) => d.abs() <= tol && a <= ANTIPODAL_HALF_ANGLE + tol,
        Err(_) => false,
    }
}

/// Smallest signed distance from the outer surfaces of the fingers to the wall
/// plane, considering only finger material below the wall top and within its
/// span. `+∞` when the fingers cannot touch the wall.
pub fn finger_wall_clearance(g: &GripperConfig, scene: &Scene) -> f64 {
    let Some(wall) = &scene.wall else {
        return f64::INFINITY;
    };
    let model = &scene.gripper;
    let tip = g.tip_center(model);
    if tip.z >= wall.height {
        return f64::INFINITY;
    }
    let plane = wall.plane();
    let axis = g.finger_axis();
    let reach = g.opening / 2.0 + if g.opening > 0.0 { model.finger_thickness } else { 0.0 };
    [tip + axis * reach, tip - axis * reach]
        .iter()
        .filter(|p| wall.spans(p))
        .map(|p| signed_distance_point_plane(p, &plane))
        .fold(f64::INFINITY, f64::min)
}

/// Top-down grasp straddling the thinnest horizontal side of the object.
pub fn grasp_config(
    x: &Pose,
    obj: &ObjectModel,
    gripper: &GripperModel,
    scene: &Scene,
) -> Result<GripperConfig, ContactError> {
    let [a, b] = horizontal_axes(x, obj);
    let (axis, half) = if a.1 <= b.1 { a } else { b };
    let thickness = 2.0 * half;
    if thickness > gripper.max_opening - 0.002 {
        return Err(ContactError::TooWide { thickness });
    }
    let top = top_center(x, obj);
    let bottom = ground_residual(x, obj);
    let tip_z = (top.z - GRASP_DEPTH).max(bottom + 0.5 * (top.z - bottom));
    let tip = Vec3::new(top.x, top.y, tip_z);
    if !gripper.workspace.contains(&tip, 1e-9) {
        return Err(ContactError::Unreachable(format!(
            "grasp point ({:.3}, {:.3}, {:.3}) outside workspace",
            tip.x, tip.y, tip.z
        )));
    }
    // The top-down frame maps body y to -world y before yawing.
    let yaw = (-axis.y).atan2(-axis.x) + std::f64::consts::FRAC_PI_2;
    let g = GripperConfig::top_down(tip, yaw, thickness + GRASP_MARGIN, gripper);
    let mut probe_scene = scene.clone();
    probe_scene.gripper = gripper.clone();
    if finger_wall_clearance(&g, &probe_scene) < 0.0 {
        return Err(ContactError::NoClearance {
            gap: wall_clearance(x, obj, scene).max(0.0),
        });
    }
    Ok(g)
}

/// Whether the object rests stably on one face with no interpenetration.
pub fn is_freestanding(x: &Pose, obj: &ObjectModel, scene: &Scene, tol: f64) -> bool {
    if ground_residual(x, obj).abs() > tol {
        return false;
    }
    let (k, axis) = most_vertical_axis(x);
    if axis.z.abs().min(1.0).acos() > FREESTANDING_ANGLE {
        return false;
    }
    if wall_clearance(x, obj, scene) < -tol {
        return false;
    }
    for o in &scene.obstacles {
        if box_separation(obj.cuboid(), x, &o.half_extents, &o.pose()) < -tol {
            return false;
        }
    }
    // Centroid projected to the ground must fall inside the support face.
    let mut foot = x.position;
    foot.z -= obj.cuboid().half()[k] * axis.z.abs();
    let local = x.orientation.inverse() * (foot - x.position);
    let h = obj.cuboid().half();
    (0..3)
        .filter(|&j| j != k)
        .all(|j| local[j].abs() <= h[j] - SUPPORT_MARGIN)
}

/// Equality residuals pinning the most vertical body axis (chosen at
/// `reference`) to world z.
pub fn freestanding_residual(x: &Pose, axis_index: usize) -> [f64; 2] {
    let a = x.orientation * Vec3::ith(axis_index, 1.0);
    [a.x, a.y]
}
