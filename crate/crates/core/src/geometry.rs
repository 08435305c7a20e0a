//! Rigid transforms, cuboids, planes and the collision predicates shared by
//! the rest of the crate.

use nalgebra::{Quaternion, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub type Vec3 = Vector3<f64>;

/// Rigid transform in 3-space. Orientation is a unit quaternion stored
/// `(w, x, y, z)` on the wire.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: UnitQuaternion<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::new_normalize(q.into_inner())
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            position: Vec3::zeros(),
            orientation: UnitQuaternion::identity(),
        }
    }

    pub fn new(position: Vec3, orientation: UnitQuaternion<f64>) -> Self {
        Self {
            position,
            orientation: renormalize(orientation),
        }
    }

    pub fn translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Vec3::new(x, y, z), UnitQuaternion::identity())
    }

    pub fn from_rotation(orientation: UnitQuaternion<f64>) -> Self {
        Self::new(Vec3::zeros(), orientation)
    }

    /// Pose at `position` rotated by `yaw` radians about world z.
    pub fn from_xyz_yaw(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self::new(Vec3::new(x, y, z), rot_z(yaw))
    }

    pub fn inverse(&self) -> Self {
        let inv = self.orientation.inverse();
        Self::new(-(inv * self.position), inv)
    }

    /// Maps a point expressed in this pose's frame to the parent frame.
    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.orientation * p + self.position
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.orientation * v
    }

    /// Yaw of the body x-axis projected onto the ground plane.
    pub fn yaw(&self) -> f64 {
        let x = self.orientation * Vec3::x();
        x.y.atan2(x.x)
    }
}

/// `a ∘ b`: applies `b` first, then `a`.
pub fn compose(a: &Pose, b: &Pose) -> Pose {
    Pose::new(
        a.orientation * b.position + a.position,
        a.orientation * b.orientation,
    )
}

/// The transform `X` with `compose(X, a) == b`.
pub fn relative_transform(a: &Pose, b: &Pose) -> Pose {
    compose(b, &a.inverse())
}

/// Sign-invariant geodesic angle between two orientations, radians.
pub fn quaternion_distance(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    // Equals 2·acos(|⟨a,b⟩|) but stays well conditioned for tiny angles.
    let rel = a.inverse() * b;
    2.0 * rel.imag().norm().atan2(rel.w.abs())
}

pub fn rot_z(angle: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vec3::z_axis(), angle)
}

pub fn rot_axis(axis: &Vec3, angle: f64) -> UnitQuaternion<f64> {
    if axis.norm() < 1e-15 || angle == 0.0 {
        return UnitQuaternion::identity();
    }
    UnitQuaternion::from_axis_angle(&Unit::new_normalize(*axis), angle)
}

/// Rotation vector (axis * angle) taking `from` to `to`, in the world frame.
pub fn rotation_vector_between(from: &UnitQuaternion<f64>, to: &UnitQuaternion<f64>) -> Vec3 {
    let mut d = to * from.inverse();
    if d.w < 0.0 {
        d = UnitQuaternion::new_unchecked(-d.into_inner());
    }
    d.scaled_axis()
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    position: [f64; 3],
    quaternion: [f64; 4],
}

impl Serialize for Pose {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let q = self.orientation.quaternion();
        PoseRepr {
            position: [self.position.x, self.position.y, self.position.z],
            quaternion: [q.w, q.i, q.j, q.k],
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = PoseRepr::deserialize(d)?;
        let [w, x, y, z] = r.quaternion;
        let q = Quaternion::new(w, x, y, z);
        if q.norm().is_nan() || q.norm() <= 1e-12 {
            return Err(serde::de::Error::custom("quaternion has zero norm"));
        }
        // Stored quaternions round-trip bit-exactly when already unit-norm.
        let orientation = if (q.norm() - 1.0).abs() <= 1e-12 {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::new_normalize(q)
        };
        Ok(Pose {
            position: Vec3::new(r.position[0], r.position[1], r.position[2]),
            orientation,
        })
    }
}

/// Axis-aligned (in its own frame) box centred at the origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Cuboid {
    pub half_extents: [f64; 3],
}

impl Cuboid {
    pub fn new(hx: f64, hy: f64, hz: f64) -> Self {
        Self {
            half_extents: [hx, hy, hz],
        }
    }

    pub fn is_valid(&self) -> bool {
        self.half_extents.iter().all(|h| h.is_finite() && *h > 0.0)
    }

    pub fn half(&self) -> Vec3 {
        Vec3::new(
            self.half_extents[0],
            self.half_extents[1],
            self.half_extents[2],
        )
    }

    /// Vertices in the body frame; index bit k selects the sign on axis k.
    pub fn local_corners(&self) -> [Vec3; 8] {
        let h = self.half();
        std::array::from_fn(|i| {
            Vec3::new(
                if i & 1 == 0 { -h.x } else { h.x },
                if i & 2 == 0 { -h.y } else { h.y },
                if i & 4 == 0 { -h.z } else { h.z },
            )
        })
    }

    /// Half-width of the box projected onto a world direction.
    pub fn support_radius(&self, pose: &Pose, dir: &Vec3) -> f64 {
        let h = self.half();
        (0..3)
            .map(|k| h[k] * (pose.orientation * Vec3::ith(k, 1.0)).dot(dir).abs())
            .sum()
    }

    /// Signed distance from a world point to the box surface (negative inside).
    pub fn signed_distance(&self, pose: &Pose, p: &Vec3) -> f64 {
        let local = pose.orientation.inverse() * (p - pose.position);
        let h = self.half();
        let q = Vec3::new(local.x.abs() - h.x, local.y.abs() - h.y, local.z.abs() - h.z);
        let outside = Vec3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).norm();
        let inside = q.x.max(q.y).max(q.z).min(0.0);
        outside + inside
    }
}

/// World-frame vertices of `cuboid` placed at `pose`.
pub fn corners(cuboid: &Cuboid, pose: &Pose) -> [Vec3; 8] {
    cuboid.local_corners().map(|c| pose.transform_point(&c))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub point: Vec3,
    pub normal: Vec3,
}

impl Plane {
    pub fn new(point: Vec3, normal: Vec3) -> Self {
        Self {
            point,
            normal: normal.normalize(),
        }
    }

    pub fn ground() -> Self {
        Self::new(Vec3::zeros(), Vec3::z())
    }

    pub fn is_valid(&self) -> bool {
        (self.normal.norm() - 1.0).abs() <= 1e-9
    }
}

/// Positive on the side the normal points to.
pub fn signed_distance_point_plane(p: &Vec3, plane: &Plane) -> f64 {
    plane.normal.dot(&(p - plane.point))
}

/// Largest separating gap over the 15 candidate axes of the separating-axis
/// test. Positive: separated by at least that distance. Negative: the boxes
/// interpenetrate and the magnitude is the smallest overlap over all axes.
pub fn box_separation(a: &Cuboid, pa: &Pose, b: &Cuboid, pb: &Pose) -> f64 {
    let axes_a: [Vec3; 3] = std::array::from_fn(|k| pa.orientation * Vec3::ith(k, 1.0));
    let axes_b: [Vec3; 3] = std::array::from_fn(|k| pb.orientation * Vec3::ith(k, 1.0));
    let t = pb.position - pa.position;

    let mut best = f64::NEG_INFINITY;
    let mut test = |axis: Vec3| {
        let len = axis.norm();
        if len < 1e-9 {
            return;
        }
        let l = axis / len;
        let gap = t.dot(&l).abs() - a.support_radius(pa, &l) - b.support_radius(pb, &l);
        if gap > best {
            best = gap;
        }
    };
    for ax in axes_a.iter().chain(axes_b.iter()) {
        test(*ax);
    }
    for u in &axes_a {
        for v in &axes_b {
            test(u.cross(v));
        }
    }
    best
}

/// True iff the oriented boxes intersect with positive depth.
pub fn boxes_overlap(a: &Cuboid, pa: &Pose, b: &Cuboid, pb: &Pose) -> bool {
    box_separation(a, pa, b, pb) < 0.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn pose_strategy() -> impl Strategy<Value = Pose> {
        (
            -2.0..2.0f64,
            -2.0..2.0f64,
            -2.0..2.0f64,
            -1.0..1.0f64,
            -1.0..1.0f64,
            -1.0..1.0f64,
            -1.0..1.0f64,
        )
            .prop_filter_map("degenerate quaternion", |(x, y, z, w, i, j, k)| {
                let q = Quaternion::new(w, i, j, k);
                (q.norm() > 0.1).then(|| Pose::new(Vec3::new(x, y, z), UnitQuaternion::new_normalize(q)))
            })
    }

    fn close(a: &Pose, b: &Pose, tol: f64) -> bool {
        (a.position - b.position).norm() <= tol
            && quaternion_distance(&a.orientation, &b.orientation) <= tol
    }

    #[test]
    fn compose_identity_and_translations() {
        let p = Pose::from_xyz_yaw(0.3, -0.2, 0.1, 0.7);
        assert!(close(&compose(&Pose::identity(), &p), &p, 1e-15));
        let c = compose(&Pose::translation(0.1, 0.0, 0.0), &Pose::translation(0.2, 0.0, 0.0));
        assert!((c.position - Vec3::new(0.3, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn compose_rotation_acts_on_translation() {
        let c = compose(
            &Pose::from_rotation(rot_z(FRAC_PI_2)),
            &Pose::translation(1.0, 0.0, 0.0),
        );
        assert!((c.position - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
        assert!(quaternion_distance(&c.orientation, &rot_z(FRAC_PI_2)) < 1e-12);
    }

    #[test]
    fn relative_transform_examples() {
        let p = Pose::from_xyz_yaw(0.4, 0.1, 0.03, 0.2);
        assert!(close(&relative_transform(&p, &p), &Pose::identity(), 1e-12));
        let r = relative_transform(&Pose::translation(0.1, 0.0, 0.0), &Pose::translation(0.3, 0.0, 0.0));
        assert!((r.position - Vec3::new(0.2, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn corners_examples() {
        let unit = Cuboid::new(0.5, 0.5, 0.5);
        let c = corners(&unit, &Pose::identity());
        for v in &c {
            assert!(v.iter().all(|x| (x.abs() - 0.5).abs() < 1e-15));
        }
        let b = Cuboid::new(0.1, 0.075, 0.03);
        let c = corners(&b, &Pose::translation(0.6, 0.0, 0.03));
        let zmin = c.iter().map(|v| v.z).fold(f64::INFINITY, f64::min);
        assert!(zmin.abs() < 1e-15);
        let c = corners(&b, &Pose::from_xyz_yaw(0.0, 0.0, 0.0, FRAC_PI_2));
        let xmax = c.iter().map(|v| v.x).fold(f64::NEG_INFINITY, f64::max);
        let ymax = c.iter().map(|v| v.y).fold(f64::NEG_INFINITY, f64::max);
        assert!((xmax - 0.075).abs() < 1e-12 && (ymax - 0.1).abs() < 1e-12);
    }

    #[test]
    fn plane_distance_examples() {
        let plane = Plane::new(Vec3::new(0.75, 0.0, 0.0), Vec3::new(-1.0, 0.0, 0.0));
        assert_eq!(signed_distance_point_plane(&Vec3::new(0.75, 0.3, 0.1), &plane), 0.0);
        assert!((signed_distance_point_plane(&Vec3::new(0.70, 0.0, 0.0), &plane) - 0.05).abs() < 1e-12);
        assert!((signed_distance_point_plane(&Vec3::new(0.80, 0.0, 0.0), &plane) + 0.05).abs() < 1e-12);
    }

    #[test]
    fn overlap_examples() {
        let u = Cuboid::new(0.5, 0.5, 0.5);
        let p = Pose::from_xyz_yaw(0.2, 0.1, 0.0, 0.3);
        assert!(boxes_overlap(&u, &p, &u, &p));
        assert!(!boxes_overlap(&u, &Pose::identity(), &u, &Pose::translation(3.0, 0.0, 0.0)));
        assert!(boxes_overlap(&u, &Pose::identity(), &u, &Pose::translation(0.9, 0.0, 0.0)));
        // Edge-on-edge configuration that only a cross-product axis separates.
        let a = Pose::new(Vec3::zeros(), rot_axis(&Vec3::new(1.0, 1.0, 0.0), 0.6));
        let b = Pose::new(Vec3::new(1.35, 0.0, 0.0), rot_axis(&Vec3::new(0.0, 1.0, 1.0), -0.6));
        assert_eq!(boxes_overlap(&u, &a, &u, &b), boxes_overlap(&u, &b, &u, &a));
    }

    #[test]
    fn box_signed_distance() {
        let b = Cuboid::new(0.1, 0.075, 0.03);
        let p = Pose::translation(0.65, 0.0, 0.03);
        assert!((b.signed_distance(&p, &Vec3::new(0.55, 0.0, 0.03))).abs() < 1e-12);
        assert!((b.signed_distance(&p, &Vec3::new(0.549, 0.0, 0.03)) - 0.001).abs() < 1e-12);
        assert!((b.signed_distance(&p, &Vec3::new(0.65, 0.0, 0.03)) + 0.03).abs() < 1e-12);
    }

    #[test]
    fn pose_json_roundtrip_is_exact() {
        let p = Pose::from_xyz_yaw(0.123456789, -0.3, 0.03, 0.4);
        let s = serde_json::to_string(&p).unwrap();
        let q: Pose = serde_json::from_str(&s).unwrap();
        assert_eq!(p, q);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn relative_transform_round_trip(a in pose_strategy(), b in pose_strategy()) {
            let x = relative_transform(&a, &b);
            let back = compose(&x, &a);
            prop_assert!(close(&back, &b, 1e-9));
            prop_assert!((back.orientation.norm() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn inverse_is_involutive(p in pose_strategy()) {
            prop_assert!(close(&p.inverse().inverse(), &p, 1e-9));
            prop_assert!(close(&compose(&p, &p.inverse()), &Pose::identity(), 1e-9));
        }

        #[test]
        fn centroid_of_corners_is_position(p in pose_strategy(), hx in 0.01..1.0f64, hy in 0.01..1.0f64, hz in 0.01..1.0f64) {
            let c = corners(&Cuboid::new(hx, hy, hz), &p);
            let mean = c.iter().fold(Vec3::zeros(), |acc, v| acc + v) / 8.0;
            prop_assert!((mean - p.position).norm() < 1e-12);
        }

        #[test]
        fn overlap_is_symmetric(pa in pose_strategy(), pb in pose_strategy(), h in 0.1..1.0f64) {
            let a = Cuboid::new(h, 0.5, 0.3);
            let b = Cuboid::new(0.4, h, 0.2);
            prop_assert_eq!(boxes_overlap(&a, &pa, &b, &pb), boxes_overlap(&b, &pb, &a, &pa));
        }
    }
}
