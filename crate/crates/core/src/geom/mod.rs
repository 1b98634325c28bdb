//! Geometry primitives, planar rigid transforms and on-disk point cloud and
//! trajectory formats.

mod io;

use std::f64::consts::PI;

use nalgebra::{UnitQuaternion, Vector3};

pub use io::{
    load_pointcloud_bin, load_trajectory, save_pointcloud_bin, save_trajectory, TrajectoryFormat,
};

use crate::error::{Error, Result};

/// Wrap an angle into `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can return exactly 2*pi for tiny negative inputs
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub intensity: f32,
}

impl Point {
    pub fn new(x: f32, y: f32, z: f32, intensity: f32) -> Self {
        Self { x, y, z, intensity }
    }
}

/// A single LiDAR sweep in the sensor frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
    pub stamp: f64,
    pub frame_id: String,
}

impl PointCloud {
    /// Builds a cloud, rejecting non-finite coordinates and negative intensities.
    pub fn new(points: Vec<Point>, stamp: f64, frame_id: impl Into<String>) -> Result<Self> {
        if let Some(index) = points.iter().position(|p| !point_is_valid(p)) {
            return Err(Error::NonFinitePoint { index });
        }
        Ok(Self {
            points,
            stamp,
            frame_id: frame_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub(crate) fn point_is_valid(p: &Point) -> bool {
    p.x.is_finite()
        && p.y.is_finite()
        && p.z.is_finite()
        && p.intensity.is_finite()
        && p.intensity >= 0.0
}

/// Planar pose. `yaw` is kept in `[-pi, pi)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            yaw: wrap_angle(yaw),
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.yaw.sin_cos();
        [c * p[0] - s * p[1] + self.x, s * p[0] + c * p[1] + self.y]
    }

    /// `self * other`: first apply `other`, then `self`.
    pub fn compose(&self, other: &Pose2D) -> Pose2D {
        let [x, y] = self.apply([other.x, other.y]);
        Pose2D::new(x, y, self.yaw + other.yaw)
    }

    pub fn inverse(&self) -> Pose2D {
        let (s, c) = self.yaw.sin_cos();
        Pose2D::new(-(c * self.x + s * self.y), s * self.x - c * self.y, -self.yaw)
    }

    pub fn translation_norm(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// Applies `pose` to every point.
pub fn se2_apply(pose: &Pose2D, points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    points.iter().map(|p| pose.apply(*p)).collect()
}

pub fn se2_compose(a: &Pose2D, b: &Pose2D) -> Pose2D {
    a.compose(b)
}

/// 3D pose with a unit quaternion orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose3D {
    pub translation: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
}

impl Default for Pose3D {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose3D {
    pub fn new(translation: Vector3<f64>, rotation: UnitQuaternion<f64>) -> Self {
        Self {
            translation,
            rotation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Vector3::zeros(), UnitQuaternion::identity())
    }

    pub fn from_planar(p: &Pose2D, z: f64) -> Self {
        Self::new(
            Vector3::new(p.x, p.y, z),
            UnitQuaternion::from_euler_angles(0.0, 0.0, p.yaw),
        )
    }

    pub fn yaw(&self) -> f64 {
        wrap_angle(self.rotation.euler_angles().2)
    }

    /// Drops z, roll and pitch.
    pub fn planar(&self) -> Pose2D {
        Pose2D::new(self.translation.x, self.translation.y, self.yaw())
    }

    pub fn transform_point(&self, p: Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

/// Timestamped poses with strictly increasing stamps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    stamps: Vec<f64>,
    poses: Vec<Pose3D>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_parts(stamps: Vec<f64>, poses: Vec<Pose3D>) -> Result<Self> {
        if stamps.len() != poses.len() {
            return Err(Error::InsufficientData(format!(
                "{} stamps for {} poses",
                stamps.len(),
                poses.len()
            )));
        }
        let mut t = Trajectory::new();
        for (s, p) in stamps.into_iter().zip(poses) {
            t.push(s, p)?;
        }
        Ok(t)
    }

    pub fn from_planar(stamps: &[f64], poses: &[Pose2D]) -> Result<Self> {
        Self::from_parts(
            stamps.to_vec(),
            poses.iter().map(|p| Pose3D::from_planar(p, 0.0)).collect(),
        )
    }

    /// Appends a pose; the stamp must be later than the last one.
    pub fn push(&mut self, stamp: f64, pose: Pose3D) -> Result<()> {
        if let Some(&prev) = self.stamps.last() {
            if !(stamp > prev) {
                return Err(Error::NonMonotonicStamps {
                    line: self.stamps.len() + 1,
                    prev,
                    stamp,
                });
            }
        }
        self.stamps.push(stamp);
        self.poses.push(pose);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.stamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stamps.is_empty()
    }

    pub fn stamps(&self) -> &[f64] {
        &self.stamps
    }

    pub fn poses(&self) -> &[Pose3D] {
        &self.poses
    }

    pub fn planar_poses(&self) -> Vec<Pose2D> {
        self.poses.iter().map(Pose3D::planar).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &Pose3D)> {
        self.stamps.iter().copied().zip(self.poses.iter())
    }

    /// Index of the pose closest in time to `stamp`, if within `max_gap` seconds.
    pub fn nearest(&self, stamp: f64, max_gap: f64) -> Option<usize> {
        if self.stamps.is_empty() {
            return None;
        }
        let i = self.stamps.partition_point(|&s| s < stamp);
        let candidates = [i.checked_sub(1), (i < self.stamps.len()).then_some(i)];
        candidates
            .into_iter()
            .flatten()
            .min_by(|&a, &b| {
                let da = (self.stamps[a] - stamp).abs();
                let db = (self.stamps[b] - stamp).abs();
                da.total_cmp(&db)
            })
            .filter(|&j| (self.stamps[j] - stamp).abs() <= max_gap)
    }
}
