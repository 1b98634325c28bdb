//! Corrected-pose bookkeeping: planar projection of 3D odometry, and
//! capped, dampened application of registration offsets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{wrap_angle, Pose2D, Pose3D};
use crate::registrar::RegistrationResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterParams {
    /// Fraction of the measured offset applied per frame.
    pub gamma: f64,
    /// Correction factor dividing the inlier-speed cap.
    pub f_i: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            gamma: 0.3,
            f_i: 25.0,
        }
    }
}

impl FilterParams {
    /// Correction factor for the learned (external) extractor.
    pub const F_I_EXTERNAL: f64 = 15.0;
    /// Correction factor for the built-in SIFT extractor.
    pub const F_I_SIFT: f64 = 25.0;

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config("filter: gamma must be in (0, 1]".into()));
        }
        if !(self.f_i > 0.0) {
            return Err(Error::Config("filter: f_i must be > 0".into()));
        }
        Ok(())
    }
}

/// Advances `prev_xy` by the horizontal direction of `delta_xyz`, scaled
/// to the full 3D step length. The flag is set for purely vertical motion,
/// in which case the position is left unchanged.
pub fn project_to_plane(prev_xy: [f64; 2], delta_xyz: [f64; 3]) -> ([f64; 2], bool) {
    let h = delta_xyz[0].hypot(delta_xyz[1]);
    let n = (h * h + delta_xyz[2] * delta_xyz[2]).sqrt();
    if h == 0.0 {
        return (prev_xy, n > 0.0);
    }
    let s = n / h;
    ([prev_xy[0] + delta_xyz[0] * s, prev_xy[1] + delta_xyz[1] * s], false)
}

pub fn correction_cap(inlier_count: usize, speed: f64, f_i: f64) -> f64 {
    inlier_count as f64 * speed / f_i
}

/// Per component `max(min(gamma * o, c), -c)`; yaw shares the cap.
pub fn apply_correction(offset: [f64; 3], c: f64, gamma: f64) -> [f64; 3] {
    offset.map(|o| (gamma * o).min(c).max(-c))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub corrected: Pose2D,
    pub last_odometry: Option<(f64, Pose3D)>,
    /// m/s from odometry differencing.
    pub velocity: f64,
    pub params: FilterParams,
    /// Set when the last odometry step was purely vertical.
    pub vertical_warning: bool,
}

impl FilterState {
    pub fn new(params: FilterParams, initial: Pose2D) -> Self {
        Self {
            corrected: initial,
            last_odometry: None,
            velocity: 0.0,
            params,
            vertical_warning: false,
        }
    }

    /// Advances the corrected pose by the odometry delta since the last
    /// call. The first call only latches the odometry.
    pub fn predict(&mut self, stamp: f64, odom: &Pose3D) -> Result<Pose2D> {
        if let Some((prev_stamp, prev)) = &self.last_odometry {
            if stamp <= *prev_stamp {
                return Err(Error::NonMonotonicStamps {
                    line: 0,
                    prev: *prev_stamp,
                    stamp,
                });
            }
            let d = odom.translation - prev.translation;
            let (moved, vertical) = project_to_plane([0.0, 0.0], [d.x, d.y, d.z]);
            self.vertical_warning = vertical;
            if vertical {
                log::warn!("purely vertical odometry step at t={stamp}");
            }
            // express the step in the previous odometry heading, then
            // re-apply it in the corrected heading
            let (prev_yaw, cur_yaw) = (prev.yaw(), odom.yaw());
            let rel = Pose2D::new(0.0, 0.0, -prev_yaw).apply(moved);
            let world = Pose2D::new(0.0, 0.0, self.corrected.yaw).apply(rel);
            self.corrected = Pose2D::new(
                self.corrected.x + world[0],
                self.corrected.y + world[1],
                self.corrected.yaw + wrap_angle(cur_yaw - prev_yaw),
            );
            self.velocity = d.norm() / (stamp - prev_stamp);
        }
        self.last_odometry = Some((stamp, *odom));
        Ok(self.corrected)
    }

    /// Applies a registration result measured against the current
    /// corrected pose. `transform` maps predicted map coordinates to true
    /// map coordinates. Returns the applied (x, y, yaw) correction.
    pub fn correct(&mut self, reg: &RegistrationResult) -> [f64; 3] {
        if !reg.success {
            return [0.0; 3];
        }
        let p = self.corrected;
        let moved = reg.transform.apply([p.x, p.y]);
        let offset = [moved[0] - p.x, moved[1] - p.y, reg.transform.yaw];
        let c = correction_cap(reg.inliers.len(), self.velocity, self.params.f_i);
        let applied = apply_correction(offset, c, self.params.gamma);
        self.corrected = Pose2D::new(p.x + applied[0], p.y + applied[1], p.yaw + applied[2]);
        applied
    }

    pub fn step(&mut self, stamp: f64, odom: &Pose3D, reg: &RegistrationResult) -> Result<Pose2D> {
        self.predict(stamp, odom)?;
        self.correct(reg);
        Ok(self.corrected)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{UnitQuaternion, Vector3};
    use proptest::prelude::*;

    fn odom(x: f64, y: f64, z: f64, yaw: f64) -> Pose3D {
        Pose3D::new(Vector3::new(x, y, z), UnitQuaternion::from_euler_angles(0.0, 0.0, yaw))
    }

    fn reg(t: Pose2D, inliers: usize) -> RegistrationResult {
        RegistrationResult {
            transform: t,
            inliers: (0..inliers).collect(),
            mean_residual: 0.0,
            success: true,
        }
    }

    #[test]
    fn projection_examples() {
        let (p, w) = project_to_plane([0.0, 0.0], [3.0, 4.0, 12.0]);
        assert!((p[0] - 7.8).abs() < 1e-9 && (p[1] - 10.4).abs() < 1e-9 && !w);
        assert_eq!(project_to_plane([1.0, 2.0], [3.0, 4.0, 0.0]).0, [4.0, 6.0]);
        assert_eq!(project_to_plane([1.0, 2.0], [0.0, 0.0, 0.0]), ([1.0, 2.0], false));
        assert_eq!(project_to_plane([1.0, 2.0], [0.0, 0.0, 1.0]), ([1.0, 2.0], true));
    }

    #[test]
    fn cap_examples() {
        assert!((correction_cap(100, 10.0, 15.0) - 66.666_666_666_666_67).abs() < 1e-9);
        assert_eq!(correction_cap(100, 0.0, 15.0), 0.0);
        assert_eq!(correction_cap(0, 10.0, 15.0), 0.0);
    }

    #[test]
    fn clamp_examples() {
        let c = correction_cap(100, 10.0, 15.0);
        assert!((apply_correction([0.5, 0.0, 0.0], c, 0.3)[0] - 0.15).abs() < 1e-12);
        assert_eq!(apply_correction([10.0, -10.0, 0.0], 1.0, 0.3), [1.0, -1.0, 0.0]);
        assert_eq!(apply_correction([10.0, -3.0, 0.2], 0.0, 0.3), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn failure_frames_follow_odometry() {
        let mut f = FilterState::new(FilterParams::default(), Pose2D::new(5.0, 5.0, 0.0));
        f.predict(0.0, &odom(0.0, 0.0, 0.0, 0.0)).unwrap();
        let mut failed = reg(Pose2D::new(3.0, 0.0, 0.0), 100);
        failed.success = false;
        let p = f.step(1.0, &odom(1.0, 0.0, 0.0, 0.0), &failed).unwrap();
        assert_eq!(p, Pose2D::new(6.0, 5.0, 0.0));
    }

    #[test]
    fn stationary_never_corrects() {
        let mut f = FilterState::new(FilterParams::default(), Pose2D::identity());
        f.predict(0.0, &odom(0.0, 0.0, 0.0, 0.0)).unwrap();
        let p = f.step(1.0, &odom(0.0, 0.0, 0.0, 0.0), &reg(Pose2D::new(3.0, 1.0, 0.5), 500)).unwrap();
        assert_eq!(p, Pose2D::identity());
    }

    #[test]
    fn rejects_stale_stamp() {
        let mut f = FilterState::new(FilterParams::default(), Pose2D::identity());
        f.predict(1.0, &odom(0.0, 0.0, 0.0, 0.0)).unwrap();
        assert!(f.predict(1.0, &odom(1.0, 0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn odometry_delta_rotates_into_corrected_frame() {
        // corrected heading differs from odometry by 90 degrees
        let mut f = FilterState::new(FilterParams::default(), Pose2D::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        f.predict(0.0, &odom(10.0, 0.0, 0.0, 0.0)).unwrap();
        let p = f.predict(1.0, &odom(12.0, 0.0, 0.0, 0.0)).unwrap();
        assert!(p.x.abs() < 1e-12 && (p.y - 2.0).abs() < 1e-12);
        assert!((f.velocity - 2.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn geometric_convergence(ox in -2.0..2.0f64, oy in -2.0..2.0f64, gamma in 0.05..1.0f64, n in 1usize..20) {
            // the map-consistent pose sits at a fixed offset from the
            // odometry-driven estimate; every frame measures the remaining gap
            let params = FilterParams { gamma, f_i: 25.0 };
            let mut f = FilterState::new(params, Pose2D::identity());
            f.predict(0.0, &odom(0.0, 0.0, 0.0, 0.0)).unwrap();
            let mut truth = [ox, oy];
            for k in 1..=n {
                let x = k as f64;
                f.predict(k as f64, &odom(x, 0.0, 0.0, 0.0)).unwrap();
                truth[0] = ox + x;
                let p = f.corrected;
                let gap = Pose2D::new(truth[0] - p.x, truth[1] - p.y, 0.0);
                f.correct(&reg(gap, 1000));
            }
            let p = f.corrected;
            let expect = (1.0 - gamma).powi(n as i32);
            prop_assert!((truth[0] - p.x - ox * expect).abs() < 1e-9);
            prop_assert!((truth[1] - p.y - oy * expect).abs() < 1e-9);
        }

        #[test]
        fn applied_within_cap(o in prop::array::uniform3(-100.0..100.0f64), c in 0.0..10.0f64, gamma in 0.01..1.0f64) {
            for v in apply_correction(o, c, gamma) {
                prop_assert!(v.abs() <= c);
            }
        }
    }
}
