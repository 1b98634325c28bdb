use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::success_check;
use crate::bev::BevImage;
use crate::error::{Error, Result};
use crate::features::{extract_sift, select_top_k, SiftParams};
use crate::geom::{wrap_angle, Pose2D};
use crate::map_store::{crop_local, TileSource};
use crate::matcher::MatcherConfig;
use crate::pipeline::{match_and_register, to_global};
use crate::registrar::RegistrationParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistortionConfig {
    /// Rotations are drawn from `[-max, max)` degrees.
    pub max_rotation_deg: f64,
    /// Translations per axis are drawn from `(-max, max)` metres.
    pub max_translation: f64,
    pub samples: usize,
    /// Minimum distance between query frames (m).
    pub min_spacing: f64,
}

impl Default for DistortionConfig {
    fn default() -> Self {
        Self { max_rotation_deg: 180.0, max_translation: 20.0, samples: 100, min_spacing: 1.0 }
    }
}

/// Extraction, matching and registration settings for the evaluation.
#[derive(Debug, Clone, Default)]
pub struct MatchingSetup {
    pub sift: SiftParams,
    pub matcher: MatcherConfig,
    pub registration: RegistrationParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchingSample {
    pub index: usize,
    /// Index into the query list.
    pub frame: usize,
    pub rotation_deg: f64,
    pub translation: [f64; 2],
    pub estimate: Pose2D,
    pub trans_err: f64,
    pub rot_err_deg: f64,
    pub matches: usize,
    pub inliers: usize,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchingEvalReport {
    pub samples: Vec<MatchingSample>,
    /// Percent of samples passing the success gate.
    pub success_rate: f64,
    pub mean_trans_err: f64,
    pub mean_rot_err_deg: f64,
    /// Means over successful samples only (NaN when none succeeded).
    pub mean_trans_err_success: f64,
    pub mean_rot_err_deg_success: f64,
}

impl MatchingEvalReport {
    fn from_samples(samples: Vec<MatchingSample>) -> Self {
        let n = samples.len().max(1) as f64;
        let ok: Vec<&MatchingSample> = samples.iter().filter(|s| s.success).collect();
        let m = ok.len() as f64;
        let mean_ok = |f: fn(&MatchingSample) -> f64| {
            if ok.is_empty() {
                f64::NAN
            } else {
                ok.iter().map(|s| f(s)).sum::<f64>() / m
            }
        };
        Self {
            success_rate: 100.0 * m / n,
            mean_trans_err: samples.iter().map(|s| s.trans_err).sum::<f64>() / n,
            mean_rot_err_deg: samples.iter().map(|s| s.rot_err_deg).sum::<f64>() / n,
            mean_trans_err_success: mean_ok(|s| s.trans_err),
            mean_rot_err_deg_success: mean_ok(|s| s.rot_err_deg),
            samples,
        }
    }

    /// One record per sample followed by a summary block.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# sample frame rot_deg tx ty est_x est_y est_yaw trans_err rot_err_deg matches inliers success\n");
        for r in &self.samples {
            let _ = writeln!(
                s,
                "{} {} {:.6} {:.6} {:.6} {:.6} {:.6} {:.8} {:.6} {:.6} {} {} {}",
                r.index,
                r.frame,
                r.rotation_deg,
                r.translation[0],
                r.translation[1],
                r.estimate.x,
                r.estimate.y,
                r.estimate.yaw,
                r.trans_err,
                r.rot_err_deg,
                r.matches,
                r.inliers,
                u8::from(r.success)
            );
        }
        let _ = writeln!(s, "# summary");
        let _ = writeln!(s, "samples {}", self.samples.len());
        let _ = writeln!(s, "success_rate_pct {:.4}", self.success_rate);
        let _ = writeln!(s, "mean_trans_err_all_m {:.6}", self.mean_trans_err);
        let _ = writeln!(s, "mean_rot_err_all_deg {:.6}", self.mean_rot_err_deg);
        let _ = writeln!(s, "mean_trans_err_success_m {:.6}", self.mean_trans_err_success);
        let _ = writeln!(s, "mean_rot_err_success_deg {:.6}", self.mean_rot_err_deg_success);
        s
    }
}

/// Indices of frames at least `spacing` metres apart (greedy, in order).
pub fn spaced_frames(centres: &[[f64; 2]], spacing: f64) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    for (i, c) in centres.iter().enumerate() {
        if out.iter().all(|&j| (centres[j][0] - c[0]).hypot(centres[j][1] - c[1]) >= spacing) {
            out.push(i);
        }
    }
    out
}

fn image_centre(img: &BevImage) -> [f64; 2] {
    img.pixel_to_world((img.width as f64 - 1.0) / 2.0, (img.height as f64 - 1.0) / 2.0)
}

/// Distorts each query BEV by a random rotation about its centre and a
/// random shift of its claimed position, registers it against a map crop
/// of the same size at the claimed position and compares the recovered
/// correction with the applied distortion. Queries must be rasterized in
/// the map frame.
pub fn matching_eval<S: TileSource + Sync + ?Sized>(
    map: &S,
    queries: &[BevImage],
    distortion: &DistortionConfig,
    setup: &MatchingSetup,
    seed: u64,
) -> Result<MatchingEvalReport> {
    let centres: Vec<[f64; 2]> = queries.iter().map(image_centre).collect();
    let pool = spaced_frames(&centres, distortion.min_spacing);
    if pool.is_empty() || distortion.samples == 0 {
        return Err(Error::InsufficientData("matching evaluation needs at least one query frame".into()));
    }
    let n = distortion.samples;
    let samples: Vec<MatchingSample> = (0..n)
        .into_par_iter()
        .map(|k| {
            // spread samples evenly over the pool
            let frame = pool[k * pool.len() / n];
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ k as u64);
            let max_r = distortion.max_rotation_deg.to_radians();
            let theta = if max_r > 0.0 { rng.gen_range(-max_r..max_r) } else { 0.0 };
            let mut draw = || {
                let m = distortion.max_translation;
                if m <= 0.0 {
                    return 0.0;
                }
                loop {
                    let v = rng.gen_range(-m..m);
                    if v > -m {
                        return v;
                    }
                }
            };
            let d = [draw(), draw()];
            eval_one(map, &queries[frame], centres[frame], theta, d, setup, k, frame)
        })
        .collect();
    Ok(MatchingEvalReport::from_samples(samples))
}

#[allow(clippy::too_many_arguments)]
fn eval_one<S: TileSource + ?Sized>(
    map: &S,
    query: &BevImage,
    c: [f64; 2],
    theta: f64,
    d: [f64; 2],
    setup: &MatchingSetup,
    index: usize,
    frame: usize,
) -> MatchingSample {
    let rotated = query.rotated(theta);
    let qfs = select_top_k(&extract_sift(&rotated, &setup.sift), setup.matcher.max_keypoints);
    // claimed pose: shifted by d
    let q = to_global(&qfs, Some(&Pose2D::new(d[0], d[1], 0.0)));
    let claimed = [c[0] + d[0], c[1] + d[1]];
    let crop = crop_local(map, &Pose2D::new(claimed[0], claimed[1], 0.0), query.width.max(query.height));
    let mfs = to_global(&select_top_k(&extract_sift(&crop, &setup.sift), setup.matcher.max_keypoints), None);
    let mut reg_params = setup.registration.clone();
    reg_params.seed ^= index as u64;
    let (matches, reg) = match_and_register(
        &q,
        &mfs,
        f64::INFINITY,
        setup.matcher.max_feature_distance,
        &setup.matcher,
        &reg_params,
    );
    let (trans_err, rot_err_deg) = if reg.success {
        let back = reg.transform.apply(claimed);
        (
            (back[0] - c[0]).hypot(back[1] - c[1]),
            wrap_angle(reg.transform.yaw + theta).abs().to_degrees(),
        )
    } else {
        // no estimate: the distortion stays uncorrected
        (d[0].hypot(d[1]), wrap_angle(theta).abs().to_degrees())
    };
    MatchingSample {
        index,
        frame,
        rotation_deg: theta.to_degrees(),
        translation: d,
        estimate: reg.transform,
        trans_err,
        rot_err_deg,
        matches: matches.len(),
        inliers: reg.inliers.len(),
        success: reg.success && success_check(trans_err, rot_err_deg),
    }
}
