//! Robust SE(2) estimation from contaminated point correspondences.
//!
//! Rotation is solved first from translation-invariant measurements (TIMs:
//! differences of two correspondences) with graduated non-convexity over a
//! truncated least squares cost on wrapped angles. Translation follows from
//! interval voting on the rotated residuals, and a final weighted Procrustes
//! refinement on the consensus set.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{wrap_angle, Pose2D};
use crate::matcher::MatchSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Gnc,
    Ransac,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationParams {
    /// Maximum residual of an inlier correspondence, metres.
    pub noise_bound: f64,
    /// GNC surrogate update factor.
    pub kappa: f64,
    /// Truncation threshold in units of the per-measurement noise bound.
    pub c_bar: f64,
    pub max_iterations: usize,
    pub min_inliers: usize,
    pub seed: u64,
    pub estimator: Estimator,
    pub ransac_iterations: usize,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        Self {
            noise_bound: 0.66,
            kappa: 1.39,
            c_bar: 0.5,
            max_iterations: 100,
            min_inliers: 6,
            seed: 0,
            estimator: Estimator::Gnc,
            ransac_iterations: 1000,
        }
    }
}

impl RegistrationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_bound > 0.0) {
            return Err(Error::Config("registrar: noise_bound must be > 0".into()));
        }
        if !(self.kappa > 1.0) {
            return Err(Error::Config("registrar: kappa must be > 1".into()));
        }
        if !(self.c_bar > 0.0) {
            return Err(Error::Config("registrar: c_bar must be > 0".into()));
        }
        Ok(())
    }
}

/// Correspondence between a query point and a map point, metres.
pub type PointPair = ([f64; 2], [f64; 2]);

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    /// Map-from-query transform.
    pub transform: Pose2D,
    pub inliers: Vec<usize>,
    pub mean_residual: f64,
    pub success: bool,
}

impl RegistrationResult {
    fn failure() -> Self {
        Self {
            transform: Pose2D::identity(),
            inliers: Vec::new(),
            mean_residual: 0.0,
            success: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tim {
    pub i: usize,
    pub j: usize,
    pub dq: [f64; 2],
    pub dm: [f64; 2],
}

/// TIMs over `K = min(4N, N(N-1)/2)` distinct index pairs drawn with a
/// seeded generator (all pairs when that is no more than `K`).
pub fn build_tims(pairs: &[PointPair], seed: u64) -> Result<Vec<Tim>> {
    let n = pairs.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("{n} matches, need at least 2")));
    }
    let total = n * (n - 1) / 2;
    let k = (4 * n).min(total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<(usize, usize)> = if k == total {
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
    } else {
        let mut seen = HashSet::with_capacity(k);
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            let a = rng.gen_range(0..n);
            let b = rng.gen_range(0..n);
            if a == b {
                continue;
            }
            let key = (a.min(b), a.max(b));
            if seen.insert(key) {
                out.push(key);
            }
        }
        out
    };
    chosen.shuffle(&mut rng);
    Ok(chosen
        .into_iter()
        .map(|(i, j)| {
            let (qi, mi) = pairs[i];
            let (qj, mj) = pairs[j];
            Tim {
                i,
                j,
                dq: [qj[0] - qi[0], qj[1] - qi[1]],
                dm: [mj[0] - mi[0], mj[1] - mi[1]],
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RotationEstimate {
    pub yaw: f64,
    /// One weight per input TIM; TIMs too short to carry angle are 0.
    pub weights: Vec<f64>,
}

/// TLS rotation from TIM angles via graduated non-convexity.
///
/// Per TIM, the measured angle is `angle(dm) - angle(dq)` and the
/// truncation bound is `c_bar * 2 * noise_bound * (1/|dq| + 1/|dm|)`, the
/// worst-case angular perturbation of two vectors whose endpoints move by
/// up to `noise_bound`. TIMs with either norm under `4 * noise_bound` are
/// dropped. The surrogate parameter starts at `1 / (2 max r^2 - 1)` in
/// normalised residual units and grows by `kappa` per iteration.
pub fn solve_rotation_gnc(tims: &[Tim], params: &RegistrationParams) -> Option<RotationEstimate> {
    let min_len = 4.0 * params.noise_bound;
    let mut idx = Vec::new();
    let mut phi = Vec::new();
    let mut eps = Vec::new();
    for (k, t) in tims.iter().enumerate() {
        let nq = t.dq[0].hypot(t.dq[1]);
        let nm = t.dm[0].hypot(t.dm[1]);
        if !(nq > min_len && nm > min_len) {
            continue;
        }
        idx.push(k);
        phi.push(wrap_angle(t.dm[1].atan2(t.dm[0]) - t.dq[1].atan2(t.dq[0])));
        eps.push(params.c_bar * 2.0 * params.noise_bound * (1.0 / nq + 1.0 / nm));
    }
    if idx.is_empty() {
        return None;
    }
    let m = idx.len();
    let residual = |yaw: f64, k: usize| wrap_angle(phi[k] - yaw);

    // consensus initialisation: the measured angle agreeing with the most
    // others (candidates subsampled deterministically for large sets)
    let stride = m.div_ceil(256);
    let mut yaw = phi[0];
    let mut best_votes = 0usize;
    for c in (0..m).step_by(stride) {
        let votes = (0..m).filter(|&k| residual(phi[c], k).abs() <= eps[k]).count();
        if votes > best_votes {
            best_votes = votes;
            yaw = phi[c];
        }
    }
    // weighted mean of wrapped residuals is the local TLS/LS step
    let step = |yaw: f64, w: &[f64]| {
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..m {
            let wk = w[k] / (eps[k] * eps[k]);
            num += wk * residual(yaw, k);
            den += wk;
        }
        if den > 0.0 {
            wrap_angle(yaw + num / den)
        } else {
            yaw
        }
    };
    let mut w = vec![1.0; m];
    let max_r2 = (0..m)
        .map(|k| (residual(yaw, k) / eps[k]).powi(2))
        .fold(0.0, f64::max);
    if max_r2 <= 1.0 {
        // everything already inside its truncation bound
        for _ in 0..3 {
            yaw = step(yaw, &w);
        }
    } else {
        let mut mu = 1.0 / (2.0 * max_r2 - 1.0);
        for _ in 0..params.max_iterations {
            for k in 0..m {
                let r2 = (residual(yaw, k) / eps[k]).powi(2);
                w[k] = if r2 <= mu / (mu + 1.0) {
                    1.0
                } else if r2 >= (mu + 1.0) / mu {
                    0.0
                } else {
                    (mu * (mu + 1.0) / r2).sqrt() - mu
                };
            }
            if w.iter().all(|&x| x == 0.0) {
                break;
            }
            yaw = step(yaw, &w);
            let binary = w.iter().all(|&x| x == 0.0 || x == 1.0);
            if binary && mu > 1.0 {
                break;
            }
            mu *= params.kappa;
        }
        // settle: hard TLS weights at the final angle
        for _ in 0..3 {
            for k in 0..m {
                w[k] = if residual(yaw, k).abs() <= eps[k] { 1.0 } else { 0.0 };
            }
            if w.iter().all(|&x| x == 0.0) {
                break;
            }
            yaw = step(yaw, &w);
        }
    }
    let mut weights = vec![0.0; tims.len()];
    for (slot, &k) in idx.iter().enumerate() {
        weights[k] = w[slot];
    }
    Some(RotationEstimate { yaw, weights })
}

fn rotate(yaw: f64, p: [f64; 2]) -> [f64; 2] {
    let (s, c) = yaw.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1]]
}

/// Densest window of width `2 * half` over sorted values; returns the mean
/// of the values inside it. Equal counts keep the first window.
fn interval_vote(values: &[f64], half: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let (mut best_lo, mut best_hi, mut best_n) = (0, 0, 0);
    let mut hi = 0;
    for lo in 0..v.len() {
        while hi < v.len() && v[hi] - v[lo] <= 2.0 * half {
            hi += 1;
        }
        if hi - lo > best_n {
            best_n = hi - lo;
            best_lo = lo;
            best_hi = hi;
        }
    }
    v[best_lo..best_hi].iter().sum::<f64>() / best_n as f64
}

fn residuals(pairs: &[PointPair], t: &Pose2D) -> Vec<f64> {
    pairs
        .iter()
        .map(|(q, m)| {
            let p = t.apply(*q);
            (m[0] - p[0]).hypot(m[1] - p[1])
        })
        .collect()
}

fn inliers_of(res: &[f64], bound: f64) -> Vec<usize> {
    (0..res.len()).filter(|&i| res[i] <= bound).collect()
}

/// Least-squares rigid transform on the selected pairs.
fn procrustes(pairs: &[PointPair], sel: &[usize]) -> Option<Pose2D> {
    if sel.len() < 2 {
        return None;
    }
    let n = sel.len() as f64;
    let (mut qc, mut mc) = ([0.0; 2], [0.0; 2]);
    for &i in sel {
        let (q, m) = pairs[i];
        qc[0] += q[0] / n;
        qc[1] += q[1] / n;
        mc[0] += m[0] / n;
        mc[1] += m[1] / n;
    }
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &i in sel {
        let (q, m) = pairs[i];
        let (a, b) = ([q[0] - qc[0], q[1] - qc[1]], [m[0] - mc[0], m[1] - mc[1]]);
        sxx += a[0] * b[0] + a[1] * b[1];
        sxy += a[0] * b[1] - a[1] * b[0];
    }
    if sxx == 0.0 && sxy == 0.0 {
        return None;
    }
    let yaw = sxy.atan2(sxx);
    let r = rotate(yaw, qc);
    Some(Pose2D::new(mc[0] - r[0], mc[1] - r[1], yaw))
}

/// Translation by per-axis interval voting on `map - R(yaw) query`, then a
/// joint 2D re-centering on the matches within `noise_bound`.
pub fn solve_translation(pairs: &[PointPair], yaw: f64, params: &RegistrationParams) -> ([f64; 2], Vec<usize>) {
    if pairs.is_empty() {
        return ([0.0, 0.0], Vec::new());
    }
    let d: Vec<[f64; 2]> = pairs
        .iter()
        .map(|(q, m)| {
            let r = rotate(yaw, *q);
            [m[0] - r[0], m[1] - r[1]]
        })
        .collect();
    let xs: Vec<f64> = d.iter().map(|p| p[0]).collect();
    let ys: Vec<f64> = d.iter().map(|p| p[1]).collect();
    let mut t = [
        interval_vote(&xs, params.noise_bound),
        interval_vote(&ys, params.noise_bound),
    ];
    let within = |t: [f64; 2]| -> Vec<usize> {
        (0..d.len())
            .filter(|&i| (d[i][0] - t[0]).hypot(d[i][1] - t[1]) <= params.noise_bound)
            .collect()
    };
    let mut inl = within(t);
    for _ in 0..5 {
        if inl.is_empty() {
            break;
        }
        let n = inl.len() as f64;
        let nt = [
            inl.iter().map(|&i| d[i][0]).sum::<f64>() / n,
            inl.iter().map(|&i| d[i][1]).sum::<f64>() / n,
        ];
        let next = within(nt);
        if next.len() < inl.len() {
            break;
        }
        t = nt;
        if next == inl {
            break;
        }
        inl = next;
    }
    (t, inl)
}

/// Alternate Procrustes on the consensus set and re-selection of inliers
/// until the set is stable.
fn refine(pairs: &[PointPair], mut transform: Pose2D, bound: f64) -> (Pose2D, Vec<usize>) {
    let mut inl = inliers_of(&residuals(pairs, &transform), bound);
    for _ in 0..10 {
        let Some(next_t) = procrustes(pairs, &inl) else {
            break;
        };
        let next = inliers_of(&residuals(pairs, &next_t), bound);
        if next.len() < inl.len() {
            break;
        }
        transform = next_t;
        if next == inl {
            break;
        }
        inl = next;
    }
    (transform, inl)
}

fn finish(pairs: &[PointPair], transform: Pose2D, params: &RegistrationParams) -> RegistrationResult {
    let (transform, _) = refine(pairs, transform, params.noise_bound);
    let res = residuals(pairs, &transform);
    let inliers = inliers_of(&res, params.noise_bound);
    let mean_residual = if inliers.is_empty() {
        0.0
    } else {
        inliers.iter().map(|&i| res[i]).sum::<f64>() / inliers.len() as f64
    };
    RegistrationResult {
        success: inliers.len() >= params.min_inliers.max(2),
        transform,
        inliers,
        mean_residual,
    }
}

pub fn estimate_se2_pairs(pairs: &[PointPair], params: &RegistrationParams) -> RegistrationResult {
    if pairs.len() < 2 || pairs.iter().any(|(q, m)| !q.iter().chain(m).all(|v| v.is_finite())) {
        return RegistrationResult::failure();
    }
    match params.estimator {
        Estimator::Gnc => {
            let Ok(tims) = build_tims(pairs, params.seed) else {
                return RegistrationResult::failure();
            };
            let Some(rot) = solve_rotation_gnc(&tims, params) else {
                return RegistrationResult::failure();
            };
            let (t, inl) = solve_translation(pairs, rot.yaw, params);
            if inl.len() < 2 {
                return RegistrationResult::failure();
            }
            finish(pairs, Pose2D::new(t[0], t[1], rot.yaw), params)
        }
        Estimator::Ransac => ransac(pairs, params),
    }
}

pub fn estimate_se2(matches: &MatchSet, params: &RegistrationParams) -> RegistrationResult {
    estimate_se2_pairs(&matches.world_pairs(), params)
}

/// Two-point RANSAC followed by the same refinement.
pub fn ransac(pairs: &[PointPair], params: &RegistrationParams) -> RegistrationResult {
    let n = pairs.len();
    if n < 2 {
        return RegistrationResult::failure();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(usize, Pose2D)> = None;
    for _ in 0..params.ransac_iterations {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a == b {
            continue;
        }
        let Some(t) = procrustes(pairs, &[a, b]) else {
            continue;
        };
        let count = residuals(pairs, &t).iter().filter(|&&r| r <= params.noise_bound).count();
        if best.as_ref().is_none_or(|(c, _)| count > *c) {
            best = Some((count, t));
        }
    }
    match best {
        Some((_, t)) => finish(pairs, t, params),
        None => RegistrationResult::failure(),
    }
}
