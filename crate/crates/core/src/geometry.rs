//! Rigid poses, the shared anchor frame and pinhole projection.
//!
//! Conventions (see `docs/coordinate-frames.md`):
//!
//! - right-handed frames, quaternions stored as `(w, x, y, z)`;
//! - camera frame: `+Z` forward, `+X` right, `+Y` down (image rows grow downward);
//! - angles are degrees at API boundaries and radians internally.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid point: depth {0} is not positive")]
    InvalidPoint(f64),
    #[error("field of view {0}° out of range (0, 180)")]
    FovOutOfRange(f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("pixel ({u}, {v}) outside {width}x{height} image")]
    PixelOutOfBounds { u: f64, v: f64, width: u32, height: u32 },
    #[error("quaternion is not unit length (norm {0})")]
    NonUnitQuaternion(f64),
}

/// Rigid transform mapping points from a child frame into a parent frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub translation: Vec3,
    pub rotation: UnitQuaternion<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self { translation: Vec3::zeros(), rotation: UnitQuaternion::identity() }
    }

    pub fn new(translation: Vec3, rotation: UnitQuaternion<f64>) -> Self {
        Self { translation, rotation }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Vec3::new(x, y, z), UnitQuaternion::identity())
    }

    /// Builds a pose from raw `(w, x, y, z)` quaternion components.
    ///
    /// The quaternion must already be unit length within `1e-6`; it is then
    /// renormalized.
    pub fn from_components(t: [f64; 3], q_wxyz: [f64; 4]) -> Result<Self, GeometryError> {
        let q = Quaternion::new(q_wxyz[0], q_wxyz[1], q_wxyz[2], q_wxyz[3]);
        let norm = q.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOLERANCE || t.iter().any(|c| !c.is_finite()) {
            return Err(GeometryError::NonUnitQuaternion(norm));
        }
        Ok(Self::new(Vec3::from(t), UnitQuaternion::from_quaternion(q)))
    }

    /// Rotation of `angle_deg` degrees about `axis` with no translation.
    pub fn from_axis_angle(axis: Vec3, angle_deg: f64) -> Self {
        let axis = nalgebra::Unit::new_normalize(axis);
        Self::new(Vec3::zeros(), UnitQuaternion::from_axis_angle(&axis, angle_deg.to_radians()))
    }

    /// Quaternion components in `(w, x, y, z)` order.
    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn rotate_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let rotation = renormalize(self.rotation * other.rotation);
        Pose { translation: self.transform_point(&other.translation), rotation }
    }

    pub fn inverse(&self) -> Pose {
        let rotation = renormalize(self.rotation.inverse());
        Pose { translation: -(rotation * self.translation), rotation }
    }

    /// Largest absolute difference in translation and quaternion components,
    /// treating `q` and `-q` as the same rotation.
    pub fn max_abs_diff(&self, other: &Pose) -> f64 {
        let dt = (self.translation - other.translation).amax();
        let a = self.quaternion_wxyz();
        let b = other.quaternion_wxyz();
        let same = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let flipped = a.iter().zip(&b).map(|(x, y)| (x + y).abs()).fold(0.0, f64::max);
        dt.max(same.min(flipped))
    }
}

fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_quaternion(q.into_inner())
}

pub fn compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

pub fn invert(a: &Pose) -> Pose {
    a.inverse()
}

/// Pose of the shared anchor object in one peer's local tracking frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AnchorFrame {
    pub local_anchor_pose: Pose,
}

impl AnchorFrame {
    pub fn new(local_anchor_pose: Pose) -> Self {
        Self { local_anchor_pose }
    }

    /// Re-expresses a point from anchor coordinates into this peer's local frame.
    pub fn point_to_local(&self, p_anchor: &Vec3) -> Vec3 {
        self.local_anchor_pose.transform_point(p_anchor)
    }
}

/// Expresses a locally tracked device pose relative to the anchor. This is the
/// form poses take on the wire.
pub fn to_anchor_frame(device_pose_local: &Pose, anchor: &AnchorFrame) -> Pose {
    anchor.local_anchor_pose.inverse().compose(device_pose_local)
}

pub fn from_anchor_frame(pose_anchor_rel: &Pose, anchor: &AnchorFrame) -> Pose {
    anchor.local_anchor_pose.compose(pose_anchor_rel)
}

/// Pinhole camera model. Pixel `(u, v)` addresses column `u`, row `v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidIntrinsics("zero image size".into()));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{}",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }

    /// Horizontal and vertical field of view in degrees.
    pub fn fov_deg(&self) -> (f64, f64) {
        let h = 2.0 * ((self.width as f64 / 2.0) / self.fx).atan();
        let v = 2.0 * ((self.height as f64 / 2.0) / self.fy).atan();
        (h.to_degrees(), v.to_degrees())
    }

    /// Stable 8-byte fingerprint of the parameters.
    pub fn digest(&self) -> [u8; 8] {
        let mut bytes = Vec::with_capacity(40);
        for v in [self.fx, self.fy, self.cx, self.cy] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&self.width.to_le_bytes());
        bytes.extend_from_slice(&self.height.to_le_bytes());
        crate::digest8(&bytes)
    }
}

pub fn intrinsics_from_fov(hfov_deg: f64, vfov_deg: f64, width: u32, height: u32) -> Result<Intrinsics, GeometryError> {
    for fov in [hfov_deg, vfov_deg] {
        if !(fov > 0.0 && fov < 180.0) {
            return Err(GeometryError::FovOutOfRange(fov));
        }
    }
    let fx = (width as f64 / 2.0) / (hfov_deg.to_radians() / 2.0).tan();
    let fy = (height as f64 / 2.0) / (vfov_deg.to_radians() / 2.0).tan();
    Intrinsics::new(fx, fy, width as f64 / 2.0, height as f64 / 2.0, width, height)
}

/// Back-projects pixel `(u, v)` at metric `depth` into the camera frame.
pub fn unproject(u: f64, v: f64, depth: f64, k: &Intrinsics) -> Result<Vec3, GeometryError> {
    if !(depth > 0.0) {
        return Err(GeometryError::InvalidPoint(depth));
    }
    if !k.contains(u, v) {
        return Err(GeometryError::PixelOutOfBounds { u, v, width: k.width, height: k.height });
    }
    Ok(Vec3::new((u - k.cx) * depth / k.fx, (v - k.cy) * depth / k.fy, depth))
}

/// Projects a camera-frame point to `(u, v, depth)`; `None` behind the camera.
pub fn project(p: &Vec3, k: &Intrinsics) -> Option<(f64, f64, f64)> {
    if !(p.z > 0.0) {
        return None;
    }
    Some((k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy, p.z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix4;
    use proptest::prelude::*;

    // Homogeneous matrix built straight from the quaternion formula, independent
    // of the pose algebra under test.
    fn to_matrix(p: &Pose) -> Matrix4<f64> {
        let [w, x, y, z] = p.quaternion_wxyz();
        let t = p.translation;
        Matrix4::new(
            1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y), t.x,
            2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x), t.y,
            2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y), t.z,
            0.0, 0.0, 0.0, 1.0,
        )
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (
            prop::array::uniform3(-5.0f64..5.0),
            prop::array::uniform4(-1.0f64..1.0),
        )
            .prop_filter("non-degenerate quaternion", |(_, q)| q.iter().map(|c| c * c).sum::<f64>() > 1e-3)
            .prop_map(|(t, q)| {
                let q = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]));
                Pose::new(Vec3::from(t), q)
            })
    }

    fn arb_point() -> impl Strategy<Value = Vec3> {
        prop::array::uniform3(-3.0f64..3.0).prop_map(Vec3::from)
    }

    #[test]
    fn identity_laws() {
        let p = Pose::new(Vec3::new(0.3, -1.0, 2.0), UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3));
        assert!(compose(&Pose::identity(), &p).max_abs_diff(&p) < 1e-12);
        assert!(compose(&p, &invert(&p)).max_abs_diff(&Pose::identity()) < 1e-6);
        assert!(invert(&Pose::identity()).max_abs_diff(&Pose::identity()) < 1e-15);
    }

    #[test]
    fn compose_translations_matches_matrix_product() {
        let a = Pose::from_translation(1.0, 0.0, 0.0);
        let b = Pose::from_translation(0.0, 2.0, 0.0);
        let c = compose(&a, &b);
        let m = to_matrix(&a) * to_matrix(&b);
        assert!((to_matrix(&c) - m).amax() < 1e-12);
        assert!(c.max_abs_diff(&Pose::from_translation(1.0, 2.0, 0.0)) < 1e-12);
    }

    #[test]
    fn invert_pure_translation() {
        let p = invert(&Pose::from_translation(1.0, 2.0, 3.0));
        assert!(p.max_abs_diff(&Pose::from_translation(-1.0, -2.0, -3.0)) < 1e-15);
    }

    #[test]
    fn anchor_frame_basics() {
        let p = Pose::new(Vec3::new(0.5, 0.1, -0.2), UnitQuaternion::from_euler_angles(0.0, 0.7, 0.0));
        let anchor = AnchorFrame::new(p);
        assert!(to_anchor_frame(&p, &anchor).max_abs_diff(&Pose::identity()) < 1e-6);
        let ident = AnchorFrame::default();
        assert!(to_anchor_frame(&p, &ident).max_abs_diff(&p) < 1e-12);
        assert!(from_anchor_frame(&Pose::identity(), &anchor).max_abs_diff(&p) < 1e-12);
    }

    #[test]
    fn unproject_principal_point_and_unit_offset() {
        let k = Intrinsics::new(500.0, 400.0, 320.0, 240.0, 640, 480).unwrap();
        let p = unproject(320.0, 240.0, 1.0, &k).unwrap();
        assert!((p - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-15);
        let p = unproject(320.0 + 250.0, 240.0, 1.0, &k).unwrap();
        assert!((p.x - 0.5).abs() < 1e-15);
        // (cx+fx) lies outside a 640-wide image; use a wider one for the literal example.
        let wide = Intrinsics::new(500.0, 400.0, 320.0, 240.0, 1280, 480).unwrap();
        let p = unproject(820.0, 240.0, 1.0, &wide).unwrap();
        assert!((p - Vec3::new(1.0, 0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn unproject_rejects_bad_depth() {
        let k = intrinsics_from_fov(90.0, 90.0, 64, 64).unwrap();
        assert_eq!(unproject(1.0, 1.0, 0.0, &k), Err(GeometryError::InvalidPoint(0.0)));
        assert!(unproject(1.0, 1.0, -2.0, &k).is_err());
        assert!(unproject(64.0, 1.0, 1.0, &k).is_err());
    }

    #[test]
    fn fov_conversions() {
        let k = intrinsics_from_fov(90.0, 90.0, 640, 480).unwrap();
        assert!((k.fx - 320.0).abs() < 1e-9);
        assert!((k.fy - 240.0).abs() < 1e-9);
        assert_eq!((k.cx, k.cy), (320.0, 240.0));
        // tan(34.5°) = 0.6872810, so fx = 320 / 0.6872810 = 465.60
        let k = intrinsics_from_fov(69.0, 42.0, 640, 480).unwrap();
        let hand = 320.0 / 0.687_280_958_6;
        assert!((k.fx - hand).abs() < 1e-6, "{} vs {}", k.fx, hand);
        assert!(intrinsics_from_fov(0.0, 40.0, 64, 64).is_err());
        assert!(intrinsics_from_fov(60.0, 180.0, 64, 64).is_err());
        let (h, v) = k.fov_deg();
        assert!((h - 69.0).abs() < 1e-9 && (v - 42.0).abs() < 1e-9);
    }

    #[test]
    fn intrinsics_validation() {
        assert!(Intrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 3.9, 0.0, 4, 4).is_ok());
    }

    proptest! {
        #[test]
        fn compose_matches_matrix_product(a in arb_pose(), b in arb_pose()) {
            let c = compose(&a, &b);
            let m = to_matrix(&a) * to_matrix(&b);
            prop_assert!((to_matrix(&c) - m).amax() < 1e-9);
            prop_assert!((c.rotation.quaternion().norm() - 1.0).abs() < 1e-6);
        }

        #[test]
        fn inverse_matches_matrix_inverse(p in arb_pose()) {
            let inv = invert(&p);
            let m = to_matrix(&p).try_inverse().unwrap();
            prop_assert!((to_matrix(&inv) - m).amax() < 1e-9);
            prop_assert!(compose(&inv, &p).max_abs_diff(&Pose::identity()) < 1e-6);
            prop_assert!(compose(&p, &inv).max_abs_diff(&Pose::identity()) < 1e-6);
        }

        #[test]
        fn compose_is_associative(a in arb_pose(), b in arb_pose(), c in arb_pose()) {
            let l = compose(&compose(&a, &b), &c);
            let r = compose(&a, &compose(&b, &c));
            prop_assert!(l.max_abs_diff(&r) < 1e-6);
        }

        #[test]
        fn anchor_round_trip(p in arb_pose(), anchor in arb_pose()) {
            let anchor = AnchorFrame::new(anchor);
            let back = from_anchor_frame(&to_anchor_frame(&p, &anchor), &anchor);
            prop_assert!(back.max_abs_diff(&p) < 1e-6);
        }

        #[test]
        fn peers_differ_by_relative_anchor(rel in arb_pose(), a in arb_pose(), b in arb_pose()) {
            let (fa, fb) = (AnchorFrame::new(a), AnchorFrame::new(b));
            let in_a = from_anchor_frame(&rel, &fa);
            let in_b = from_anchor_frame(&rel, &fb);
            let predicted = compose(&compose(&a, &invert(&b)), &in_b);
            prop_assert!(predicted.max_abs_diff(&in_a) < 1e-6);
        }

        #[test]
        fn shared_points_keep_distances(pts in prop::collection::vec(arb_point(), 2..8), a in arb_pose(), b in arb_pose()) {
            let (fa, fb) = (AnchorFrame::new(a), AnchorFrame::new(b));
            let la: Vec<Vec3> = pts.iter().map(|p| fa.point_to_local(p)).collect();
            let lb: Vec<Vec3> = pts.iter().map(|p| fb.point_to_local(p)).collect();
            for i in 0..pts.len() {
                for j in i + 1..pts.len() {
                    prop_assert!(((la[i] - la[j]).norm() - (lb[i] - lb[j]).norm()).abs() < 1e-6);
                }
            }
        }

        #[test]
        fn unproject_inverts_project(u in 0.0f64..639.0, v in 0.0f64..479.0, z in 0.05f64..10.0) {
            let k = intrinsics_from_fov(69.0, 42.0, 640, 480).unwrap();
            let p = unproject(u, v, z, &k).unwrap();
            let (pu, pv, pz) = project(&p, &k).unwrap();
            prop_assert!((pu - u).abs() < 1e-6 && (pv - v).abs() < 1e-6 && (pz - z).abs() < 1e-12);
        }
    }
}
