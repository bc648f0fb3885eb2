//! Remote reconstruction: holograms, spatial video quads, PLY export and
//! error metrics.

use std::fmt::Write as _;

use nalgebra::Matrix3;
use thiserror::Error;

use crate::depthcodec::{ColorFrame, DepthFrame, MetricDepth};
use crate::geometry::{Intrinsics, Pose, Vec3};

/// Distance of a spatial video quad from its peer when none is given.
pub const DEFAULT_QUAD_DISTANCE_M: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CloudError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("point counts differ: {0} vs {1}")]
    CountMismatch(usize, usize),
    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("not enough points for a plane fit ({0})")]
    TooFewPoints(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudPoint {
    pub position: Vec3,
    pub color: [u8; 3],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<CloudPoint>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, pose: &Pose) -> PointCloud {
        let points = self
            .points
            .iter()
            .map(|p| CloudPoint { position: pose.transform_point(&p.position), color: p.color })
            .collect();
        PointCloud { points }
    }

    pub fn extend(&mut self, other: &PointCloud) {
        self.points.extend_from_slice(&other.points);
    }
}

fn check_dims(color: &ColorFrame, dims: (u32, u32), k: &Intrinsics) -> Result<(), CloudError> {
    if (color.width, color.height) != dims || dims != (k.width, k.height) {
        return Err(CloudError::DimensionMismatch(format!(
            "color {}x{}, depth {}x{}, intrinsics {}x{}",
            color.width, color.height, dims.0, dims.1, k.width, k.height
        )));
    }
    Ok(())
}

/// Builds a point per pixel where `depth_at` yields a positive depth, placed
/// by `camera_pose` (camera frame → anchor frame).
fn reconstruct_with(
    color: &ColorFrame,
    k: &Intrinsics,
    camera_pose: &Pose,
    depth_at: impl Fn(usize) -> Option<f64>,
) -> PointCloud {
    let w = k.width as usize;
    let mut points = Vec::with_capacity(w * k.height as usize);
    let rot = camera_pose.rotation.to_rotation_matrix();
    let xs: Vec<f64> = (0..w).map(|u| (u as f64 - k.cx) / k.fx).collect();
    for v in 0..k.height as usize {
        for u in 0..w {
            let i = v * w + u;
            let Some(z) = depth_at(i).filter(|z| *z > 0.0) else { continue };
            let p = Vec3::new(xs[u] * z, (v as f64 - k.cy) / k.fy * z, z);
            let c = &color.pixels[3 * i..3 * i + 3];
            points.push(CloudPoint { position: rot * p + camera_pose.translation, color: [c[0], c[1], c[2]] });
        }
    }
    PointCloud { points }
}

/// One colored point per valid depth pixel, expressed in the anchor frame.
pub fn reconstruct_hologram(
    color: &ColorFrame,
    depth: &DepthFrame,
    k: &Intrinsics,
    camera_pose_anchor_rel: &Pose,
) -> Result<PointCloud, CloudError> {
    check_dims(color, (depth.width, depth.height), k)?;
    Ok(reconstruct_with(color, k, camera_pose_anchor_rel, |i| match depth.samples[i] {
        0 => None,
        mm => Some(mm as f64 / 1000.0),
    }))
}

/// Same as [`reconstruct_hologram`] from unrounded decoded depth.
pub fn reconstruct_hologram_metric(
    color: &ColorFrame,
    depth: &MetricDepth,
    k: &Intrinsics,
    camera_pose_anchor_rel: &Pose,
) -> Result<PointCloud, CloudError> {
    check_dims(color, (depth.width, depth.height), k)?;
    Ok(reconstruct_with(color, k, camera_pose_anchor_rel, |i| depth.meters[i]))
}

/// A video rectangle floating in front of a peer, sized to its camera view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialQuad {
    /// Top-left, top-right, bottom-right, bottom-left, anchor frame.
    pub corners: [Vec3; 4],
    pub texture_width: u32,
    pub texture_height: u32,
}

impl SpatialQuad {
    pub fn center(&self) -> Vec3 {
        self.corners.iter().sum::<Vec3>() / 4.0
    }

    pub fn width_m(&self) -> f64 {
        (self.corners[1] - self.corners[0]).norm()
    }

    pub fn height_m(&self) -> f64 {
        (self.corners[3] - self.corners[0]).norm()
    }

    /// Distance of the fourth corner from the plane of the first three.
    pub fn planarity_residual(&self) -> f64 {
        let [a, b, _, d] = self.corners;
        let n = (b - a).cross(&(d - a)).normalize();
        (self.corners[2] - a).dot(&n).abs()
    }
}

pub fn make_spatial_quad(peer_pose_anchor_rel: &Pose, k: &Intrinsics, distance: f64) -> Result<SpatialQuad, CloudError> {
    if !(distance > 0.0) {
        return Err(CloudError::NonPositiveDistance(distance));
    }
    let half_w = distance * (k.width as f64 / 2.0) / k.fx;
    let half_h = distance * (k.height as f64 / 2.0) / k.fy;
    let local = [
        Vec3::new(-half_w, -half_h, distance),
        Vec3::new(half_w, -half_h, distance),
        Vec3::new(half_w, half_h, distance),
        Vec3::new(-half_w, half_h, distance),
    ];
    Ok(SpatialQuad {
        corners: local.map(|c| peer_pose_anchor_rel.transform_point(&c)),
        texture_width: k.width,
        texture_height: k.height,
    })
}

/// ASCII PLY with `x y z` floats and `red green blue` bytes per vertex.
pub fn export_ply(c: &PointCloud) -> Vec<u8> {
    let mut out = String::with_capacity(64 + c.points.len() * 40);
    out.push_str("ply\nformat ascii 1.0\ncomment dualstream point cloud\n");
    let _ = writeln!(out, "element vertex {}", c.points.len());
    out.push_str("property float x\nproperty float y\nproperty float z\n");
    out.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n");
    for p in &c.points {
        let [r, g, b] = p.color;
        let _ = writeln!(out, "{} {} {} {r} {g} {b}", p.position.x as f32, p.position.y as f32, p.position.z as f32);
    }
    out.into_bytes()
}

/// Root mean square distance between corresponding points.
pub fn cloud_rmse(a: &PointCloud, b: &PointCloud) -> Result<f64, CloudError> {
    if a.len() != b.len() {
        return Err(CloudError::CountMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = a.points.iter().zip(&b.points).map(|(p, q)| (p.position - q.position).norm_squared()).sum();
    Ok((sum / a.len() as f64).sqrt())
}

/// Least-squares plane through the points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneFit {
    pub centroid: Vec3,
    pub normal: Vec3,
    /// RMS of point-to-plane distances.
    pub rms_residual: f64,
}

pub fn fit_plane(c: &PointCloud) -> Result<PlaneFit, CloudError> {
    let n = c.len();
    if n < 3 {
        return Err(CloudError::TooFewPoints(n));
    }
    let centroid = c.points.iter().map(|p| p.position).sum::<Vec3>() / n as f64;
    let mut cov = Matrix3::zeros();
    for p in &c.points {
        let d = p.position - centroid;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let (min_idx, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("three eigenvalues");
    let normal = eig.eigenvectors.column(min_idx).into_owned().normalize();
    let sq: f64 = c.points.iter().map(|p| (p.position - centroid).dot(&normal).powi(2)).sum();
    Ok(PlaneFit { centroid, normal, rms_residual: (sq / n as f64).sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::intrinsics_from_fov;
    use proptest::prelude::*;

    /// Minimal PLY reader kept separate from the writer: tokenizes the header,
    /// maps property names to columns, and reads vertices back.
    fn read_ply(bytes: &[u8]) -> Vec<([f32; 3], [u8; 3])> {
        let text = std::str::from_utf8(bytes).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("ply"));
        let mut count = None;
        let mut props = Vec::new();
        for line in lines.by_ref() {
            let toks: Vec<&str> = line.split_whitespace().collect();
            match toks.as_slice() {
                ["format", fmt, _] => assert_eq!(*fmt, "ascii"),
                ["element", "vertex", n] => count = Some(n.parse::<usize>().unwrap()),
                ["property", _, name] => props.push(name.to_string()),
                ["end_header"] => break,
                _ => {}
            }
        }
        let col = |n: &str| props.iter().position(|p| p == n).unwrap();
        let cols = [col("x"), col("y"), col("z"), col("red"), col("green"), col("blue")];
        let rows: Vec<_> = lines
            .map(|l| {
                let t: Vec<&str> = l.split_whitespace().collect();
                (
                    [t[cols[0]].parse().unwrap(), t[cols[1]].parse().unwrap(), t[cols[2]].parse().unwrap()],
                    [t[cols[3]].parse().unwrap(), t[cols[4]].parse().unwrap(), t[cols[5]].parse().unwrap()],
                )
            })
            .collect();
        assert_eq!(rows.len(), count.unwrap());
        rows
    }

    fn k_small() -> Intrinsics {
        Intrinsics::new(10.0, 10.0, 2.0, 1.0, 4, 3).unwrap()
    }

    #[test]
    fn empty_depth_gives_empty_cloud() {
        let k = k_small();
        let cloud =
            reconstruct_hologram(&ColorFrame::filled(4, 3, [1, 2, 3]), &DepthFrame::filled(4, 3, 0), &k, &Pose::identity())
                .unwrap();
        assert!(cloud.is_empty());
    }

    #[test]
    fn principal_point_pixel() {
        let k = k_small();
        let mut d = DepthFrame::filled(4, 3, 0);
        d.samples[4 + 2] = 1000;
        let cloud = reconstruct_hologram(&ColorFrame::filled(4, 3, [9, 8, 7]), &d, &k, &Pose::identity()).unwrap();
        assert_eq!(cloud.len(), 1);
        assert!((cloud.points[0].position - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-15);
        assert_eq!(cloud.points[0].color, [9, 8, 7]);
    }

    #[test]
    fn dimension_mismatch() {
        let k = k_small();
        let err = reconstruct_hologram(&ColorFrame::filled(4, 2, [0; 3]), &DepthFrame::filled(4, 3, 1), &k, &Pose::identity());
        assert!(matches!(err, Err(CloudError::DimensionMismatch(_))));
    }

    #[test]
    fn flat_wall_is_planar() {
        let k = intrinsics_from_fov(60.0, 45.0, 32, 24).unwrap();
        let d = DepthFrame::filled(32, 24, 1500);
        let cloud = reconstruct_hologram(&ColorFrame::filled(32, 24, [1, 1, 1]), &d, &k, &Pose::identity()).unwrap();
        assert_eq!(cloud.len(), d.valid_count());
        assert!(cloud.points.iter().all(|p| (p.position.z - 1.5).abs() < 1e-12));
        let fit = fit_plane(&cloud).unwrap();
        assert!(fit.rms_residual < 1e-9);
        assert!((fit.normal.z.abs() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn quad_geometry() {
        let k = intrinsics_from_fov(90.0, 90.0, 64, 48).unwrap();
        let q = make_spatial_quad(&Pose::identity(), &k, 1.0).unwrap();
        assert!((q.width_m() - 2.0).abs() < 1e-12);
        assert!((q.center() - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
        assert!(q.planarity_residual() < 1e-12);
        assert!(matches!(make_spatial_quad(&Pose::identity(), &k, 0.0), Err(CloudError::NonPositiveDistance(_))));
        // Square pixels: metric aspect equals texture aspect.
        let k = intrinsics_from_fov(69.0, 42.0, 640, 480).unwrap();
        let k = Intrinsics::new(k.fx, k.fx, k.cx, k.cy, 640, 480).unwrap();
        let q = make_spatial_quad(&Pose::identity(), &k, 1.0).unwrap();
        assert!((q.width_m() / q.height_m() - 640.0 / 480.0).abs() < 1e-12);
    }

    #[test]
    fn quad_follows_yaw() {
        let k = intrinsics_from_fov(70.0, 50.0, 64, 48).unwrap();
        let yaw = Pose::from_axis_angle(Vec3::y(), 90.0);
        let base = make_spatial_quad(&Pose::identity(), &k, 1.0).unwrap();
        let turned = make_spatial_quad(&yaw, &k, 1.0).unwrap();
        for (a, b) in base.corners.iter().zip(&turned.corners) {
            // Rotation about +Y by 90°: (x, y, z) → (z, y, -x).
            let expected = Vec3::new(a.z, a.y, -a.x);
            assert!((expected - b).norm() < 1e-12);
        }
        assert!((turned.center() - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn ply_export_round_trips() {
        assert!(std::str::from_utf8(&export_ply(&PointCloud::default())).unwrap().contains("element vertex 0\n"));
        let one = PointCloud { points: vec![CloudPoint { position: Vec3::new(0.5, -1.25, 2.0), color: [1, 2, 3] }] };
        let text = String::from_utf8(export_ply(&one)).unwrap();
        assert!(text.ends_with("end_header\n0.5 -1.25 2 1 2 3\n"));
        assert_eq!(read_ply(text.as_bytes()), vec![([0.5, -1.25, 2.0], [1, 2, 3])]);
    }

    #[test]
    fn rmse_cases() {
        let a = PointCloud {
            points: (0..5).map(|i| CloudPoint { position: Vec3::new(i as f64, 0.0, 1.0), color: [0; 3] }).collect(),
        };
        assert_eq!(cloud_rmse(&a, &a).unwrap(), 0.0);
        let b = a.transformed(&Pose::from_translation(0.0, 0.0, 0.001));
        assert!((cloud_rmse(&a, &b).unwrap() - 0.001).abs() < 1e-12);
        assert_eq!(cloud_rmse(&a, &PointCloud::default()), Err(CloudError::CountMismatch(5, 0)));
    }

    proptest! {
        #[test]
        fn exported_points_parse_back(pts in prop::collection::vec((prop::array::uniform3(-5.0f32..5.0), prop::array::uniform3(any::<u8>())), 0..40)) {
            let cloud = PointCloud {
                points: pts.iter().map(|(p, c)| CloudPoint { position: Vec3::new(p[0] as f64, p[1] as f64, p[2] as f64), color: *c }).collect(),
            };
            let back = read_ply(&export_ply(&cloud));
            prop_assert_eq!(back.len(), pts.len());
            for ((p, c), (q, d)) in pts.iter().zip(&back) {
                prop_assert_eq!(p, q);
                prop_assert_eq!(c, d);
            }
        }
    }
}
