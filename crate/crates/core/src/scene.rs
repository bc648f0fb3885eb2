//! Built-in synthetic RGB-D scenes, rendered in the camera frame.
//!
//! Depth is z-depth in millimeters; pixels whose ray misses every surface are
//! 0 (no reading).

use std::fmt;
use std::str::FromStr;

use crate::depthcodec::{ColorFrame, DepthFrame};
use crate::geometry::Intrinsics;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scene {
    /// Depth rising linearly from left to right.
    Ramp { near: f64, far: f64 },
    /// Fronto-parallel plane.
    FlatWall { distance: f64 },
    /// Sphere on the optical axis over an empty background.
    Sphere { radius: f64, distance: f64 },
    /// Left half at `near`, right half at `far`.
    Step { near: f64, far: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneFrames {
    pub color: ColorFrame,
    pub depth: DepthFrame,
}

impl FromStr for Scene {
    type Err = String;

    /// `ramp[:near:far]`, `flatwall:<m>`, `sphere[:radius:distance]`,
    /// `step[:near:far]`; lengths in meters.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split(':');
        let name = parts.next().unwrap_or_default();
        let args: Vec<f64> = parts
            .map(|p| p.parse::<f64>().map_err(|_| format!("scene {s:?}: bad number {p:?}")))
            .collect::<Result<_, _>>()?;
        if args.iter().any(|a| !a.is_finite() || *a <= 0.0) {
            return Err(format!("scene {s:?}: lengths must be positive"));
        }
        let pick = |defaults: [f64; 2]| match args.len() {
            0 => Ok(defaults),
            2 => Ok([args[0], args[1]]),
            n => Err(format!("scene {s:?}: expected 0 or 2 parameters, got {n}")),
        };
        match name {
            "ramp" => pick([0.3, 1.8]).map(|[near, far]| Scene::Ramp { near, far }),
            "step" => pick([0.6, 1.4]).map(|[near, far]| Scene::Step { near, far }),
            "sphere" => pick([0.3, 1.0]).map(|[radius, distance]| Scene::Sphere { radius, distance }),
            "flatwall" => match args[..] {
                [distance] => Ok(Scene::FlatWall { distance }),
                _ => Err(format!("scene {s:?}: flatwall needs exactly one distance")),
            },
            _ => Err(format!("unknown scene {name:?}")),
        }
    }
}

impl fmt::Display for Scene {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scene::Ramp { near, far } => write!(f, "ramp:{near}:{far}"),
            Scene::FlatWall { distance } => write!(f, "flatwall:{distance}"),
            Scene::Sphere { radius, distance } => write!(f, "sphere:{radius}:{distance}"),
            Scene::Step { near, far } => write!(f, "step:{near}:{far}"),
        }
    }
}

fn to_mm(z: f64) -> u16 {
    (z * 1000.0).round().clamp(0.0, u16::MAX as f64) as u16
}

impl Scene {
    /// Z-depth in meters seen through pixel `(u, v)`, if any.
    pub fn depth_at(&self, u: f64, v: f64, k: &Intrinsics) -> Option<f64> {
        match *self {
            Scene::FlatWall { distance } => Some(distance),
            Scene::Ramp { near, far } => {
                let t = if k.width > 1 { u / (k.width - 1) as f64 } else { 0.0 };
                Some(near + (far - near) * t)
            }
            Scene::Step { near, far } => Some(if u < k.width as f64 / 2.0 { near } else { far }),
            Scene::Sphere { radius, distance } => {
                // Ray p = z·(x, y, 1) against |p − (0,0,distance)| = radius.
                let (x, y) = ((u - k.cx) / k.fx, (v - k.cy) / k.fy);
                let a = x * x + y * y + 1.0;
                let b = -2.0 * distance;
                let c = distance * distance - radius * radius;
                let disc = b * b - 4.0 * a * c;
                (disc >= 0.0).then(|| (-b - disc.sqrt()) / (2.0 * a)).filter(|z| *z > 0.0)
            }
        }
    }

    pub fn render(&self, k: &Intrinsics) -> SceneFrames {
        let (w, h) = (k.width, k.height);
        let mut samples = Vec::with_capacity((w * h) as usize);
        let mut color = ColorFrame::filled(w, h, [0, 0, 0]);
        for v in 0..h {
            for u in 0..w {
                let z = self.depth_at(u as f64, v as f64, k);
                samples.push(z.map_or(0, to_mm));
                if z.is_some() {
                    let checker = if ((u / 8) + (v / 8)) % 2 == 0 { 40 } else { 0 };
                    let r = (u * 215 / w.max(1)) as u8 + checker;
                    let g = (v * 215 / h.max(1)) as u8 + checker;
                    color.set(u, v, [r, g, 160]);
                }
            }
        }
        let depth = DepthFrame::new(w, h, samples).expect("sample count matches intrinsics");
        SceneFrames { color, depth }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::intrinsics_from_fov;

    #[test]
    fn parse_and_display() {
        for s in ["ramp:0.3:1.8", "flatwall:1.5", "sphere:0.3:1", "step:0.6:1.4"] {
            let scene: Scene = s.parse().unwrap();
            assert_eq!(scene.to_string().parse::<Scene>().unwrap(), scene);
        }
        assert_eq!("ramp".parse::<Scene>().unwrap(), Scene::Ramp { near: 0.3, far: 1.8 });
        assert!("flatwall".parse::<Scene>().is_err());
        assert!("sphere:1".parse::<Scene>().is_err());
        assert!("step:-1:2".parse::<Scene>().is_err());
        assert!("cube".parse::<Scene>().is_err());
    }

    #[test]
    fn flat_wall_is_constant() {
        let k = intrinsics_from_fov(60.0, 45.0, 32, 24).unwrap();
        let f = Scene::FlatWall { distance: 1.5 }.render(&k);
        assert!(f.depth.samples.iter().all(|&d| d == 1500));
    }

    #[test]
    fn ramp_endpoints_and_step_edge() {
        let k = intrinsics_from_fov(60.0, 45.0, 101, 10).unwrap();
        let f = Scene::Ramp { near: 0.3, far: 1.3 }.render(&k);
        assert_eq!(f.depth.get(0, 5), 300);
        assert_eq!(f.depth.get(50, 5), 800);
        assert_eq!(f.depth.get(100, 5), 1300);
        let s = Scene::Step { near: 0.6, far: 1.4 }.render(&k);
        assert_eq!(s.depth.get(50, 0), 600);
        assert_eq!(s.depth.get(51, 0), 1400);
    }

    #[test]
    fn sphere_front_surface() {
        let k = intrinsics_from_fov(60.0, 45.0, 64, 48).unwrap();
        let scene = Scene::Sphere { radius: 0.3, distance: 1.0 };
        let z = scene.depth_at(k.cx, k.cy, &k).unwrap();
        assert!((z - 0.7).abs() < 1e-12);
        let f = scene.render(&k);
        assert_eq!(f.depth.get(0, 0), 0);
        assert_eq!(f.color.get(0, 0), [0, 0, 0]);
        // Every hit lies on the sphere.
        for v in 0..48 {
            for u in 0..64 {
                if let Some(z) = scene.depth_at(u as f64, v as f64, &k) {
                    let p = crate::geometry::unproject(u as f64, v as f64, z, &k).unwrap();
                    assert!(((p - crate::geometry::Vec3::new(0.0, 0.0, 1.0)).norm() - 0.3).abs() < 1e-9);
                }
            }
        }
    }
}
