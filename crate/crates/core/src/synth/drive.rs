use nalgebra::{UnitQuaternion, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scene::Scene;
use super::sensor::{simulate_with, SensorModel};
use crate::error::{Error, Result};
use crate::geom::{wrap_angle, PointCloud, Pose3D, Trajectory};

/// Systematic odometry errors.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriftModel {
    /// Heading error accumulated per metre travelled (degrees).
    pub yaw_rate_bias_deg_per_m: f64,
    /// Relative step-length error (0.01 = 1 %).
    pub scale_bias: f64,
}

/// Ground truth and drifting odometry for a scripted drive. Clouds are
/// simulated on demand so long drives never sit in memory at once.
#[derive(Debug, Clone)]
pub struct Drive {
    pub truth: Trajectory,
    pub odometry: Trajectory,
    pub model: SensorModel,
    pub seed: u64,
    directions: Vec<[f64; 3]>,
}

impl Drive {
    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    /// Sensor-frame scan at frame `i`.
    pub fn scan(&self, scene: &Scene, i: usize) -> PointCloud {
        let stamp = self.truth.stamps()[i];
        simulate_with(scene, &self.truth.poses()[i], &self.model, &self.directions, stamp, self.seed)
    }

    /// Scans for a range of frames, simulated in parallel.
    pub fn scans(&self, scene: &Scene, range: std::ops::Range<usize>) -> Vec<PointCloud> {
        range.into_par_iter().map(|i| self.scan(scene, i)).collect()
    }
}

/// Corrupts the true per-step motion with a per-metre heading bias and a
/// step-length scale error and integrates it from the first true pose.
pub fn drift_odometry(truth: &Trajectory, drift: &DriftModel) -> Result<Trajectory> {
    let poses = truth.poses();
    let Some(first) = poses.first() else {
        return Ok(Trajectory::new());
    };
    let bias = drift.yaw_rate_bias_deg_per_m.to_radians();
    let scale = 1.0 + drift.scale_bias;
    let mut out = Vec::with_capacity(poses.len());
    out.push(*first);
    let mut pos = first.translation;
    let mut err = 0.0f64; // accumulated heading error
    for w in poses.windows(2) {
        let d = w[1].translation - w[0].translation;
        let len = d.norm();
        // rotate by the mid-step heading error so the arc integrates exactly
        let mid = err + 0.5 * bias * len;
        let (s, c) = mid.sin_cos();
        let step = Vector3::new(c * d.x - s * d.y, s * d.x + c * d.y, d.z) * scale;
        pos += step;
        err += bias * len;
        let yaw = wrap_angle(w[1].yaw() + err);
        let (roll, pitch, _) = w[1].rotation.euler_angles();
        out.push(Pose3D::new(pos, UnitQuaternion::from_euler_angles(roll, pitch, yaw)));
    }
    Trajectory::from_parts(truth.stamps().to_vec(), out)
}

pub fn simulate_drive(scene: &Scene, path: &Trajectory, model: &SensorModel, drift: &DriftModel, seed: u64) -> Result<Drive> {
    model.validate()?;
    if let Some(i) = path.poses().iter().position(|p| !scene.contains(p.translation.x, p.translation.y)) {
        return Err(Error::Scene(format!("path pose {i} outside the scene extent")));
    }
    Ok(Drive {
        truth: path.clone(),
        odometry: drift_odometry(path, drift)?,
        model: model.clone(),
        seed,
        directions: model.directions(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Pose2D;

    fn straight(n: usize) -> Trajectory {
        let stamps: Vec<f64> = (0..n).map(|i| i as f64 * 0.1).collect();
        let poses: Vec<Pose2D> = (0..n).map(|i| Pose2D::new(i as f64, 0.0, 0.0)).collect();
        Trajectory::from_planar(&stamps, &poses).unwrap()
    }

    #[test]
    fn zero_drift_is_identity() {
        let stamps: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let poses: Vec<Pose2D> = (0..50)
            .map(|i| {
                let a = i as f64 * 0.1;
                Pose2D::new(20.0 * a.cos(), 20.0 * a.sin(), a + 1.5)
            })
            .collect();
        let t = Trajectory::from_planar(&stamps, &poses).unwrap();
        let o = drift_odometry(&t, &DriftModel::default()).unwrap();
        for (a, b) in o.poses().iter().zip(t.poses()) {
            assert!((a.translation - b.translation).norm() < 1e-9);
            assert!(wrap_angle(a.yaw() - b.yaw()).abs() < 1e-12);
        }
    }

    #[test]
    fn yaw_bias_matches_arc() {
        let t = straight(1001);
        let drift = DriftModel { yaw_rate_bias_deg_per_m: 0.05, scale_bias: 0.0 };
        let o = drift_odometry(&t, &drift).unwrap();
        let end = o.poses().last().unwrap();
        assert!((end.yaw().to_degrees() - 50.0).abs() < 1e-9);
        let b = 0.05f64.to_radians();
        let (ex, ey) = ((b * 1000.0).sin() / b, (1.0 - (b * 1000.0).cos()) / b);
        assert!((end.translation.x - ex).abs() < 1e-3, "{} vs {ex}", end.translation.x);
        assert!((end.translation.y - ey).abs() < 1e-3, "{} vs {ey}", end.translation.y);
    }

    #[test]
    fn scale_bias_stretches() {
        let o = drift_odometry(&straight(101), &DriftModel { yaw_rate_bias_deg_per_m: 0.0, scale_bias: 0.01 }).unwrap();
        assert!((o.poses()[100].translation.x - 101.0).abs() < 1e-9);
    }
}
