//! Trajectory alignment and error metrics, the success gate, and the
//! distorted-query matching evaluation.

mod matching;

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix2, Vector2};

pub use matching::{matching_eval, spaced_frames, DistortionConfig, MatchingEvalReport, MatchingSample, MatchingSetup};

use crate::error::{Error, Result};
use crate::geom::{wrap_angle, Pose2D, Trajectory};

/// Maximum stamp gap for associating estimate and truth poses, seconds.
pub const ASSOCIATION_GAP: f64 = 0.05;
pub const SUCCESS_TRANSLATION: f64 = 2.0;
pub const SUCCESS_ROTATION_DEG: f64 = 5.0;

/// Strict gate: translation below 2 m and rotation below 5 degrees.
pub fn success_check(trans_err: f64, rot_err_deg: f64) -> bool {
    trans_err < SUCCESS_TRANSLATION && rot_err_deg < SUCCESS_ROTATION_DEG
}

/// Rigid planar alignment of an estimate onto the ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    /// truth ≈ transform ∘ estimate
    pub transform: Pose2D,
    /// Associated (estimate index, truth index) pairs.
    pub pairs: Vec<(usize, usize)>,
    pub aligned: Vec<Pose2D>,
    pub truth: Vec<Pose2D>,
    pub stamps: Vec<f64>,
}

/// Pairs every estimate pose with the nearest truth stamp within `max_gap`.
pub fn associate(estimate: &Trajectory, truth: &Trajectory, max_gap: f64) -> Vec<(usize, usize)> {
    estimate
        .stamps()
        .iter()
        .enumerate()
        .filter_map(|(i, &s)| truth.nearest(s, max_gap).map(|j| (i, j)))
        .collect()
}

/// Least-squares rotation and translation (no scale) mapping `src` onto
/// `dst`, with the reflection case excluded.
pub fn umeyama_2d(src: &[[f64; 2]], dst: &[[f64; 2]]) -> Result<Pose2D> {
    let n = src.len();
    if n < 2 || dst.len() != n {
        return Err(Error::InsufficientData(format!("{n} associated poses, need at least 2")));
    }
    let mean = |pts: &[[f64; 2]]| {
        pts.iter().fold(Vector2::zeros(), |a, p| a + Vector2::new(p[0], p[1])) / n as f64
    };
    let (ms, md) = (mean(src), mean(dst));
    let mut cov = Matrix2::zeros();
    for (s, d) in src.iter().zip(dst) {
        cov += (Vector2::new(d[0], d[1]) - md) * (Vector2::new(s[0], s[1]) - ms).transpose();
    }
    cov /= n as f64;
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut s = Matrix2::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        s[(1, 1)] = -1.0;
    }
    let r = u * s * v_t;
    let yaw = r[(1, 0)].atan2(r[(0, 0)]);
    let t = md - r * ms;
    Ok(Pose2D::new(t.x, t.y, yaw))
}

/// Associates by stamp and aligns the planar projection of `estimate` onto
/// `truth`.
pub fn umeyama_align_2d(estimate: &Trajectory, truth: &Trajectory) -> Result<Alignment> {
    let pairs = associate(estimate, truth, ASSOCIATION_GAP);
    let est = estimate.planar_poses();
    let tru = truth.planar_poses();
    let src: Vec<[f64; 2]> = pairs.iter().map(|&(i, _)| [est[i].x, est[i].y]).collect();
    let dst: Vec<[f64; 2]> = pairs.iter().map(|&(_, j)| [tru[j].x, tru[j].y]).collect();
    let transform = umeyama_2d(&src, &dst)?;
    Ok(Alignment {
        aligned: pairs.iter().map(|&(i, _)| transform.compose(&est[i])).collect(),
        truth: pairs.iter().map(|&(_, j)| tru[j]).collect(),
        stamps: pairs.iter().map(|&(i, _)| estimate.stamps()[i]).collect(),
        transform,
        pairs,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryErrorReport {
    /// RMSE of planar position error, metres.
    pub ate: f64,
    /// RMSE of wrapped yaw error, degrees.
    pub are: f64,
    pub pairs: usize,
}

impl TrajectoryErrorReport {
    pub fn to_text(&self) -> String {
        format!("pairs {}\nate_m {:.6}\nare_deg {:.6}\n", self.pairs, self.ate, self.are)
    }
}

pub fn compute_ate_are(aligned: &[Pose2D], truth: &[Pose2D]) -> TrajectoryErrorReport {
    let n = aligned.len().min(truth.len());
    if n == 0 {
        return TrajectoryErrorReport { ate: 0.0, are: 0.0, pairs: 0 };
    }
    let (mut se, mut sr) = (0.0, 0.0);
    for (a, t) in aligned.iter().zip(truth) {
        se += (a.x - t.x).powi(2) + (a.y - t.y).powi(2);
        sr += wrap_angle(a.yaw - t.yaw).to_degrees().powi(2);
    }
    TrajectoryErrorReport {
        ate: (se / n as f64).sqrt(),
        are: (sr / n as f64).sqrt(),
        pairs: n,
    }
}

/// Alignment followed by ATE/ARE.
pub fn evaluate_trajectory(estimate: &Trajectory, truth: &Trajectory) -> Result<(Alignment, TrajectoryErrorReport)> {
    let a = umeyama_align_2d(estimate, truth)?;
    let r = compute_ate_are(&a.aligned, &a.truth);
    Ok((a, r))
}

/// Plot data: `stamp x y yaw truth_x truth_y truth_yaw err` per line.
pub fn write_trajectory_plot(path: &Path, alignment: &Alignment) -> Result<()> {
    let mut s = String::from("# stamp x y yaw truth_x truth_y truth_yaw position_error\n");
    for ((st, a), t) in alignment.stamps.iter().zip(&alignment.aligned).zip(&alignment.truth) {
        let e = (a.x - t.x).hypot(a.y - t.y);
        let _ = writeln!(s, "{st} {} {} {} {} {} {} {e}", a.x, a.y, a.yaw, t.x, t.y, t.yaw);
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Error-coloured track: `x y error` triplets.
pub fn write_error_track(path: &Path, alignment: &Alignment) -> Result<()> {
    let mut s = String::from("# x y position_error\n");
    for (a, t) in alignment.aligned.iter().zip(&alignment.truth) {
        let _ = writeln!(s, "{} {} {}", a.x, a.y, (a.x - t.x).hypot(a.y - t.y));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn traj(poses: &[Pose2D]) -> Trajectory {
        let stamps: Vec<f64> = (0..poses.len()).map(|i| i as f64 * 0.1).collect();
        Trajectory::from_planar(&stamps, poses).unwrap()
    }

    fn wiggly(n: usize) -> Vec<Pose2D> {
        (0..n)
            .map(|i| {
                let t = i as f64 * 0.3;
                Pose2D::new(10.0 * t.cos() + t, 5.0 * (0.7 * t).sin(), 0.2 * t)
            })
            .collect()
    }

    #[test]
    fn success_gate() {
        assert!(success_check(1.9, 4.9));
        assert!(!success_check(2.0, 1.0));
        assert!(!success_check(1.0, 5.0));
        assert!(success_check(0.0, 0.0));
    }

    #[test]
    fn identical_trajectories() {
        let t = traj(&wiggly(30));
        let (a, r) = evaluate_trajectory(&t, &t).unwrap();
        assert!(a.transform.x.abs() < 1e-12 && a.transform.yaw.abs() < 1e-12);
        assert!(r.ate < 1e-12 && r.are < 1e-9);
    }

    #[test]
    fn rotated_copy() {
        let truth = wiggly(30);
        let rot = Pose2D::new(0.0, 0.0, 10f64.to_radians());
        let est: Vec<Pose2D> = truth.iter().map(|p| rot.compose(p)).collect();
        let (a, r) = evaluate_trajectory(&traj(&est), &traj(&truth)).unwrap();
        assert!((a.transform.yaw + 10f64.to_radians()).abs() < 1e-12);
        assert!(r.ate < 1e-9 && r.are < 1e-9);
    }

    #[test]
    fn collinear_is_well_defined() {
        let truth: Vec<Pose2D> = (0..10).map(|i| Pose2D::new(i as f64, 0.0, 0.0)).collect();
        let est: Vec<Pose2D> = (0..10).map(|i| Pose2D::new(0.0, i as f64, 0.0)).collect();
        let (a, r) = evaluate_trajectory(&traj(&est), &traj(&truth)).unwrap();
        assert!((a.transform.yaw + std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!(r.ate < 1e-9);
    }

    #[test]
    fn too_few_pairs() {
        let t = traj(&wiggly(1));
        assert!(umeyama_align_2d(&t, &t).is_err());
        let other = Trajectory::from_planar(&[100.0, 101.0], &wiggly(2)).unwrap();
        assert!(umeyama_align_2d(&traj(&wiggly(2)), &other).is_err());
    }

    #[test]
    fn alternating_yaw_error() {
        let truth = wiggly(10);
        let est: Vec<Pose2D> = truth
            .iter()
            .enumerate()
            .map(|(i, p)| Pose2D::new(p.x, p.y, p.yaw + if i % 2 == 0 { 2f64 } else { -2.0 }.to_radians()))
            .collect();
        let r = compute_ate_are(&est, &truth);
        assert!((r.are - 2.0).abs() < 1e-9);
        assert_eq!(r.ate, 0.0);
    }

    #[test]
    fn lateral_offset_absorbed() {
        let truth = wiggly(20);
        let est: Vec<Pose2D> = truth.iter().map(|p| Pose2D::new(p.x, p.y + 1.0, p.yaw)).collect();
        let (_, r) = evaluate_trajectory(&traj(&est), &traj(&truth)).unwrap();
        assert!(r.ate < 1e-9);
    }

    #[test]
    fn association_gap() {
        let est = Trajectory::from_planar(&[0.0, 1.0, 2.0], &wiggly(3)).unwrap();
        let truth = Trajectory::from_planar(&[0.04, 1.06, 2.0], &wiggly(3)).unwrap();
        assert_eq!(associate(&est, &truth, ASSOCIATION_GAP), vec![(0, 0), (2, 2)]);
    }

    proptest! {
        #[test]
        fn rigid_copy_residual_zero(x in -100.0..100.0f64, y in -100.0..100.0f64, yaw in -3.1..3.1f64) {
            let truth = wiggly(25);
            let g = Pose2D::new(x, y, yaw);
            let est: Vec<Pose2D> = truth.iter().map(|p| g.compose(p)).collect();
            let (a, r) = evaluate_trajectory(&traj(&est), &traj(&truth)).unwrap();
            prop_assert!(r.ate < 1e-9);
            prop_assert!(r.are < 1e-9);
            // idempotent
            let again = traj(&a.aligned);
            let (b, _) = evaluate_trajectory(&again, &traj(&truth)).unwrap();
            for (p, q) in a.aligned.iter().zip(&b.aligned) {
                prop_assert!((p.x - q.x).abs() < 1e-9 && (p.y - q.y).abs() < 1e-9);
            }
        }

        #[test]
        fn ate_invariant_to_rigid_pretransform(
            x in -50.0..50.0f64, y in -50.0..50.0f64, yaw in -3.1..3.1f64, noise_seed in 0u64..100,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(noise_seed);
            let truth = wiggly(25);
            let est: Vec<Pose2D> = truth
                .iter()
                .map(|p| Pose2D::new(p.x + rng.gen_range(-0.5..0.5), p.y + rng.gen_range(-0.5..0.5), p.yaw + rng.gen_range(-0.05..0.05)))
                .collect();
            let g = Pose2D::new(x, y, yaw);
            let moved: Vec<Pose2D> = est.iter().map(|p| g.compose(p)).collect();
            let (_, r1) = evaluate_trajectory(&traj(&est), &traj(&truth)).unwrap();
            let (_, r2) = evaluate_trajectory(&traj(&moved), &traj(&truth)).unwrap();
            prop_assert!((r1.ate - r2.ate).abs() < 1e-9);
            prop_assert!((r1.are - r2.are).abs() < 1e-6);
        }
    }
}
