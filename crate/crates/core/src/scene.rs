//! Environment and body models: ground, wall, obstacles, object and gripper.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{box_separation, rot_z, Cuboid, Plane, Pose, Vec3};

/// Slab depth used when checking finger clearance against the wall. Object
/// contact treats the wall as a zero-thickness plane.
pub const WALL_SLAB_THICKNESS: f64 = 0.01;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("scene has no wall")]
    MissingWall,
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Wall {
    /// World x of the wall centre (the centre lies on y = 0).
    pub center_x: f64,
    /// Rotation about world z, degrees. 0 means the wall runs parallel to y.
    pub yaw_deg: f64,
    #[serde(default = "Wall::default_height")]
    pub height: f64,
    #[serde(default = "Wall::default_length")]
    pub length: f64,
}

impl Wall {
    pub const DEFAULT_HEIGHT: f64 = 0.10;
    pub const DEFAULT_LENGTH: f64 = 1.015;

    fn default_height() -> f64 {
        Self::DEFAULT_HEIGHT
    }

    fn default_length() -> f64 {
        Self::DEFAULT_LENGTH
    }

    pub fn new(center_x: f64, yaw_deg: f64) -> Self {
        Self {
            center_x,
            yaw_deg,
            height: Self::DEFAULT_HEIGHT,
            length: Self::DEFAULT_LENGTH,
        }
    }

    pub fn yaw(&self) -> f64 {
        self.yaw_deg.to_radians()
    }

    pub fn center(&self) -> Vec3 {
        Vec3::new(self.center_x, 0.0, 0.0)
    }

    /// Horizontal unit normal pointing from the wall towards the robot origin.
    pub fn inward_normal(&self) -> Vec3 {
        let n = rot_z(self.yaw()) * Vec3::new(-1.0, 0.0, 0.0);
        Vec3::new(n.x, n.y, 0.0).normalize()
    }

    /// Horizontal direction along the wall, `z × n`.
    pub fn tangent(&self) -> Vec3 {
        Vec3::z().cross(&self.inward_normal())
    }

    pub fn plane(&self) -> Plane {
        Plane::new(self.center(), self.inward_normal())
    }

    /// Whether a world point lies within the wall's lateral span.
    pub fn spans(&self, p: &Vec3) -> bool {
        self.tangent().dot(&(p - self.center())).abs() <= self.length / 2.0
    }

    /// Box occupied by the wall slab behind its contact plane.
    pub fn slab(&self) -> (Cuboid, Pose) {
        let half = Cuboid::new(WALL_SLAB_THICKNESS / 2.0, self.length / 2.0, self.height / 2.0);
        let c = self.center() - self.inward_normal() * (WALL_SLAB_THICKNESS / 2.0)
            + Vec3::new(0.0, 0.0, self.height / 2.0);
        (half, Pose::new(c, rot_z(self.yaw())))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacle {
    pub name: String,
    pub half_extents: Cuboid,
    /// Geometric centre in the world x-y plane; the obstacle rests on the ground.
    pub center_xy: [f64; 2],
}

impl Obstacle {
    pub fn new(name: &str, half_extents: [f64; 3], center_xy: [f64; 2]) -> Self {
        Self {
            name: name.to_string(),
            half_extents: Cuboid { half_extents },
            center_xy,
        }
    }

    /// Obstacle 1 of the reference setup, (25.8, 30.8, 7.7) cm.
    pub fn reference_1(center_xy: [f64; 2]) -> Self {
        Self::new("1", [0.129, 0.154, 0.0385], center_xy)
    }

    /// Obstacle 2 of the reference setup, (18.5, 23.5, 14.0) cm.
    pub fn reference_2(center_xy: [f64; 2]) -> Self {
        Self::new("2", [0.0925, 0.1175, 0.07], center_xy)
    }

    /// Obstacle 3 of the reference setup, (21.0, 25.5, 16.3) cm.
    pub fn reference_3(center_xy: [f64; 2]) -> Self {
        Self::new("3", [0.105, 0.1275, 0.0815], center_xy)
    }

    pub fn pose(&self) -> Pose {
        Pose::translation(
            self.center_xy[0],
            self.center_xy[1],
            self.half_extents.half_extents[2],
        )
    }

    pub fn height(&self) -> f64 {
        2.0 * self.half_extents.half_extents[2]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectModel {
    pub name: String,
    pub half_extents: Cuboid,
}

impl ObjectModel {
    pub fn new(name: &str, hx: f64, hy: f64, hz: f64) -> Self {
        Self {
            name: name.to_string(),
            half_extents: Cuboid::new(hx, hy, hz),
        }
    }

    pub fn cuboid(&self) -> &Cuboid {
        &self.half_extents
    }

    /// Pose of the object lying flat on its body z face at `(x, y)`.
    pub fn resting_pose(&self, x: f64, y: f64, yaw: f64) -> Pose {
        Pose::from_xyz_yaw(x, y, self.half_extents.half_extents[2], yaw)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn contains(&self, p: &Vec3, tol: f64) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] - tol && p[k] <= self.max[k] + tol)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GripperModel {
    pub finger_length: f64,
    pub finger_thickness: f64,
    pub max_opening: f64,
    /// Reachable region for the fingertip centre.
    pub workspace: Aabb,
}

impl Default for GripperModel {
    fn default() -> Self {
        Self {
            finger_length: 0.05,
            finger_thickness: 0.01,
            max_opening: 0.08,
            workspace: Aabb {
                min: [0.2, -0.5, 0.0],
                max: [1.0, 0.5, 0.6],
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub wall: Option<Wall>,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    #[serde(default)]
    pub gripper: GripperModel,
}

impl Scene {
    pub fn new(wall: Option<Wall>, obstacles: Vec<Obstacle>) -> Self {
        Self {
            wall,
            obstacles,
            gripper: GripperModel::default(),
        }
    }

    pub fn ground(&self) -> Plane {
        Plane::ground()
    }

    pub fn wall(&self) -> Result<&Wall, SceneError> {
        self.wall.as_ref().ok_or(SceneError::MissingWall)
    }

    /// Checks the scene invariants. Violations name the offending pair.
    pub fn validate(&self) -> Result<(), SceneError> {
        if let Some(w) = &self.wall {
            if !(w.height > 0.0 && w.length > 0.0) || !w.center_x.is_finite() || !w.yaw_deg.is_finite() {
                return Err(SceneError::InvalidScene("wall dimensions must be positive".into()));
            }
        }
        let g = &self.gripper;
        if !(g.max_opening > 0.0 && g.finger_length > 0.0 && g.finger_thickness > 0.0) {
            return Err(SceneError::InvalidScene("gripper dimensions must be positive".into()));
        }
        for o in &self.obstacles {
            if !o.half_extents.is_valid() {
                return Err(SceneError::InvalidScene(format!(
                    "obstacle '{}' has non-positive extents",
                    o.name
                )));
            }
        }
        for (i, a) in self.obstacles.iter().enumerate() {
            for b in &self.obstacles[i + 1..] {
                if box_separation(&a.half_extents, &a.pose(), &b.half_extents, &b.pose()) < 0.0 {
                    return Err(SceneError::InvalidScene(format!(
                        "obstacles '{}' and '{}' overlap",
                        a.name, b.name
                    )));
                }
            }
            if let Some(w) = &self.wall {
                let (slab, pose) = w.slab();
                if box_separation(&a.half_extents, &a.pose(), &slab, &pose) < 0.0 {
                    return Err(SceneError::InvalidScene(format!(
                        "obstacle '{}' intersects the wall",
                        a.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        let scene: Scene = serde_json::from_str(text).map_err(|e| SceneError::Parse(e.to_string()))?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }
}

/// Plane through the wall face nearest the robot origin, normal pointing
/// towards the origin.
pub fn wall_plane(scene: &Scene) -> Result<Plane, SceneError> {
    Ok(scene.wall()?.plane())
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene, SceneError> {
    Scene::from_json(&fs::read_to_string(path)?)
}

pub fn save_scene(scene: &Scene, path: impl AsRef<Path>) -> Result<(), SceneError> {
    fs::write(path, scene.to_json())?;
    Ok(())
}

pub fn load_object(path: impl AsRef<Path>) -> Result<ObjectModel, SceneError> {
    let text = fs::read_to_string(path)?;
    let obj: ObjectModel = serde_json::from_str(&text).map_err(|e| SceneError::Parse(e.to_string()))?;
    if !obj.half_extents.is_valid() {
        return Err(SceneError::InvalidScene(format!("object '{}' has non-positive extents", obj.name)));
    }
    Ok(obj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wall_plane_at_zero_yaw() {
        let s = Scene::new(Some(Wall::new(0.75, 0.0)), vec![]);
        let p = wall_plane(&s).unwrap();
        assert!((p.point - Vec3::new(0.75, 0.0, 0.0)).norm() < 1e-15);
        assert!((p.normal - Vec3::new(-1.0, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn wall_plane_yawed() {
        let s = Scene::new(Some(Wall::new(0.775, -8.5)), vec![]);
        let p = wall_plane(&s).unwrap();
        let yaw = (-8.5f64).to_radians();
        let expected = Vec3::new(-yaw.cos(), -yaw.sin(), 0.0);
        assert!((p.normal - expected).norm() < 1e-12);
        assert!(p.normal.z.abs() < 1e-12);
        assert!((p.normal.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wall_plane_is_periodic_in_yaw() {
        let a = Wall::new(0.8, 0.0).plane();
        let b = Wall::new(0.8, 360.0).plane();
        assert!((a.normal - b.normal).norm() < 1e-9);
        assert!((a.point - b.point).norm() < 1e-9);
    }

    #[test]
    fn missing_wall() {
        let s = Scene::new(None, vec![]);
        assert!(matches!(wall_plane(&s), Err(SceneError::MissingWall)));
    }

    #[test]
    fn retrieval_test_scene_loads() {
        let json = r#"{
            "wall": {"center_x": 0.80, "yaw_deg": 0.0, "height": 0.10, "length": 1.015},
            "obstacles": [
                {"name": "2", "half_extents": [0.0925, 0.1175, 0.07], "center_xy": [-0.19, 0.54]},
                {"name": "3", "half_extents": [0.105, 0.1275, 0.0815], "center_xy": [0.238, 0.353]}
            ]
        }"#;
        let s = Scene::from_json(json).unwrap();
        assert_eq!(s.obstacles.len(), 2);
        assert_eq!(s.obstacles[0].height(), 0.14);
    }

    #[test]
    fn coincident_obstacles_rejected() {
        let s = Scene::new(
            None,
            vec![Obstacle::reference_2([0.3, 0.3]), Obstacle::reference_3([0.3, 0.3])],
        );
        let err = s.validate().unwrap_err();
        assert!(err.to_string().contains("'2' and '3'"), "{err}");
    }

    #[test]
    fn obstacle_through_wall_rejected() {
        let s = Scene::new(Some(Wall::new(0.75, 0.0)), vec![Obstacle::reference_2([0.75, 0.0])]);
        assert!(matches!(s.validate(), Err(SceneError::InvalidScene(_))));
    }

    #[test]
    fn unknown_keys_rejected() {
        let json = r#"{"wall": null, "obstacles": [], "colour": "red"}"#;
        assert!(matches!(Scene::from_json(json), Err(SceneError::Parse(_))));
    }

    proptest! {
        #[test]
        fn wall_normal_horizontal_unit(yaw in -720.0..720.0f64, x in 0.5..1.0f64) {
            let n = Wall::new(x, yaw).inward_normal();
            prop_assert!(n.z.abs() < 1e-12);
            prop_assert!((n.norm() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn scene_json_round_trip_exact(x in 0.6..0.9f64, yaw in -10.0..10.0f64, ox in -0.3..0.3f64, oy in -0.3..0.3f64) {
            let s = Scene::new(Some(Wall::new(x, yaw)), vec![Obstacle::reference_1([ox, oy])]);
            let back: Scene = serde_json::from_str(&s.to_json()).unwrap();
            prop_assert_eq!(back, s);
        }
    }
}
