//! Difference-of-Gaussians keypoints with gradient-histogram descriptors,
//! computed on the intensity channel of a BEV image.
//!
//! The detector and descriptor follow Lowe's scale-invariant feature
//! transform closely (including the refinements of the common OpenCV
//! implementation: 5-iteration subpixel refinement, [1 4 6 4 1] orientation
//! histogram smoothing, 4x4x8 trilinear descriptor bins clipped at 0.2).
//! Invalid (unobserved) pixels read as zero; keypoints sitting on an invalid
//! pixel, or whose descriptor window is mostly invalid, are dropped.

use std::f32::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{Descriptor, FeatureSet, FeatureSource, Keypoint, DESCRIPTOR_DIM};
use crate::bev::BevImage;

const IMG_BORDER: usize = 5;
const MAX_INTERP_STEPS: usize = 5;
const ORI_HIST_BINS: usize = 36;
const ORI_SIG_FCTR: f32 = 1.5;
const ORI_RADIUS: f32 = 3.0 * ORI_SIG_FCTR;
const ORI_PEAK_RATIO: f32 = 0.8;
const DESCR_WIDTH: usize = 4;
const DESCR_HIST_BINS: usize = 8;
const DESCR_SCL_FCTR: f32 = 3.0;
const DESCR_MAG_THR: f32 = 0.2;
const MAX_INVALID_FRACTION: f32 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SiftParams {
    pub octaves: usize,
    pub scales_per_octave: usize,
    /// Blur of the first scale of each octave.
    pub sigma: f64,
    /// Blur already present in the input raster.
    pub input_sigma: f64,
    /// Minimum |DoG| response times `scales_per_octave` (intensities in [0, 1]).
    pub contrast_threshold: f64,
    /// Maximum principal curvature ratio.
    pub edge_threshold: f64,
    /// Double the image before building the pyramid.
    pub upsample: bool,
}

impl Default for SiftParams {
    fn default() -> Self {
        Self {
            octaves: 4,
            scales_per_octave: 3,
            sigma: 1.6,
            input_sigma: 0.5,
            contrast_threshold: 0.01,
            edge_threshold: 10.0,
            upsample: true,
        }
    }
}

#[derive(Clone)]
struct Plane {
    w: usize,
    h: usize,
    data: Vec<f32>,
}

impl Plane {
    fn new(w: usize, h: usize) -> Self {
        Self {
            w,
            h,
            data: vec![0.0; w * h],
        }
    }

    #[inline]
    fn at(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.w + c]
    }
}

#[inline]
fn reflect101(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let mut i = i;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * n - 2 - i;
        } else {
            return i as usize;
        }
    }
}

fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f32> = (-radius..=radius)
        .map(|x| (-(x * x) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

fn blur(src: &Plane, sigma: f32) -> Plane {
    if sigma <= 1e-3 {
        return src.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (w, h) = (src.w, src.h);
    let mut tmp = Plane::new(w, h);
    for y in 0..h {
        let row = &src.data[y * w..(y + 1) * w];
        let out = &mut tmp.data[y * w..(y + 1) * w];
        for x in 0..w {
            let xi = x as isize;
            let mut acc = 0.0;
            if xi >= r && xi + r < w as isize {
                let base = (xi - r) as usize;
                for (t, kv) in k.iter().enumerate() {
                    acc += kv * row[base + t];
                }
            } else {
                for (t, kv) in k.iter().enumerate() {
                    acc += kv * row[reflect101(xi + t as isize - r, w)];
                }
            }
            out[x] = acc;
        }
    }
    let mut dst = Plane::new(w, h);
    for y in 0..h {
        let yi = y as isize;
        let out = &mut dst.data[y * w..(y + 1) * w];
        for (t, kv) in k.iter().enumerate() {
            let sy = reflect101(yi + t as isize - r, h);
            let row = &tmp.data[sy * w..(sy + 1) * w];
            for x in 0..w {
                out[x] += kv * row[x];
            }
        }
    }
    dst
}

fn downsample(src: &Plane) -> Plane {
    let (w, h) = (src.w / 2, src.h / 2);
    let mut dst = Plane::new(w, h);
    for r in 0..h {
        for c in 0..w {
            dst.data[r * w + c] = src.at(2 * r, 2 * c);
        }
    }
    dst
}

fn upsample2(src: &Plane) -> Plane {
    let (w, h) = (src.w * 2, src.h * 2);
    let mut dst = Plane::new(w, h);
    for r in 0..h {
        for c in 0..w {
            let fy = (r as f32 * 0.5).min((src.h - 1) as f32);
            let fx = (c as f32 * 0.5).min((src.w - 1) as f32);
            let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(src.h - 1), (x0 + 1).min(src.w - 1));
            let (ty, tx) = (fy - y0 as f32, fx - x0 as f32);
            dst.data[r * w + c] = (1.0 - ty) * ((1.0 - tx) * src.at(y0, x0) + tx * src.at(y0, x1))
                + ty * ((1.0 - tx) * src.at(y1, x0) + tx * src.at(y1, x1));
        }
    }
    dst
}

struct Octave {
    gauss: Vec<Plane>,
    dog: Vec<Plane>,
    mask: Vec<bool>,
    /// Octave pixel size in input pixels.
    step: f32,
}

struct Candidate {
    octave: usize,
    layer: usize,
    r: usize,
    c: usize,
    /// Octave-space subpixel position.
    x: f32,
    y: f32,
    /// Blur in octave pixels.
    scl: f32,
    response: f32,
}

/// Extracts keypoints and descriptors from the intensity channel.
pub fn extract_sift(img: &BevImage, params: &SiftParams) -> FeatureSet {
    let mut out = FeatureSet::empty(FeatureSource::BuiltinSift, img.origin, img.resolution);
    if img.width < 2 * IMG_BORDER + 3 || img.height < 2 * IMG_BORDER + 3 {
        return out;
    }
    let mut base = Plane::new(img.width, img.height);
    for i in 0..img.width * img.height {
        if img.mask[i] {
            base.data[i] = img.intensity[i];
        }
    }
    let (first, first_mask, step0) = if params.upsample {
        let up = upsample2(&base);
        let mut m = vec![false; up.w * up.h];
        for r in 0..up.h {
            for c in 0..up.w {
                m[r * up.w + c] = img.mask[(r / 2) * img.width + c / 2];
            }
        }
        (up, m, 0.5f32)
    } else {
        (base, img.mask.clone(), 1.0f32)
    };
    let in_sigma = params.input_sigma as f32 * if params.upsample { 2.0 } else { 1.0 };
    let sigma = params.sigma as f32;
    let s = params.scales_per_octave.max(1);

    let min_dim = first.w.min(first.h) as f32;
    let max_octaves = ((min_dim.log2() - 2.0).floor().max(1.0)) as usize;
    let n_octaves = params.octaves.clamp(1, max_octaves);

    // per-layer incremental blur
    let k = 2f32.powf(1.0 / s as f32);
    let mut incr = vec![0.0f32; s + 3];
    for (i, v) in incr.iter_mut().enumerate().skip(1) {
        let prev = sigma * k.powi(i as i32 - 1);
        let total = prev * k;
        *v = (total * total - prev * prev).sqrt();
    }

    let mut octaves: Vec<Octave> = Vec::with_capacity(n_octaves);
    let mut next_base = blur(&first, (sigma * sigma - in_sigma * in_sigma).max(0.01).sqrt());
    let mut mask = first_mask;
    let mut step = step0;
    for o in 0..n_octaves {
        let mut gauss = Vec::with_capacity(s + 3);
        gauss.push(next_base.clone());
        for i in 1..s + 3 {
            let g = blur(&gauss[i - 1], incr[i]);
            gauss.push(g);
        }
        let dog = gauss
            .windows(2)
            .map(|w| Plane {
                w: w[0].w,
                h: w[0].h,
                data: w[1].data.iter().zip(&w[0].data).map(|(a, b)| a - b).collect(),
            })
            .collect();
        let w = gauss[0].w;
        if o + 1 < n_octaves {
            next_base = downsample(&gauss[s]);
        }
        octaves.push(Octave {
            gauss,
            dog,
            mask: mask.clone(),
            step,
        });
        if o + 1 < n_octaves {
            let (nw, nh) = (next_base.w, next_base.h);
            let mut m = vec![false; nw * nh];
            for r in 0..nh {
                for c in 0..nw {
                    m[r * nw + c] = mask[2 * r * w + 2 * c];
                }
            }
            mask = m;
            step *= 2.0;
        }
    }

    let threshold = 0.5 * params.contrast_threshold as f32 / s as f32;
    let mut candidates = Vec::new();
    for (o, oct) in octaves.iter().enumerate() {
        let (w, h) = (oct.dog[0].w, oct.dog[0].h);
        if w <= 2 * IMG_BORDER || h <= 2 * IMG_BORDER {
            continue;
        }
        for layer in 1..=s {
            let (prev, cur, next) = (&oct.dog[layer - 1], &oct.dog[layer], &oct.dog[layer + 1]);
            for r in IMG_BORDER..h - IMG_BORDER {
                for c in IMG_BORDER..w - IMG_BORDER {
                    let val = cur.at(r, c);
                    if val.abs() <= threshold {
                        continue;
                    }
                    if !is_extremum(prev, cur, next, r, c, val) {
                        continue;
                    }
                    if let Some(cand) = refine(oct, o, layer, r, c, params, s, sigma) {
                        candidates.push(cand);
                    }
                }
            }
        }
    }

    for cand in candidates {
        let oct = &octaves[cand.octave];
        let g = &oct.gauss[cand.layer];
        if !oct.mask[cand.r * g.w + cand.c] {
            continue;
        }
        for angle in orientations(g, cand.r, cand.c, cand.scl) {
            let Some(desc) = descriptor(g, &oct.mask, cand.r, cand.c, angle, cand.scl) else {
                continue;
            };
            out.push(
                Keypoint {
                    u: (cand.x * oct.step) as f64,
                    v: (cand.y * oct.step) as f64,
                    scale: (cand.scl * oct.step) as f64,
                    orientation: angle as f64,
                    score: cand.response as f64,
                },
                desc,
            );
        }
    }
    out
}

fn is_extremum(prev: &Plane, cur: &Plane, next: &Plane, r: usize, c: usize, val: f32) -> bool {
    let w = cur.w;
    let planes = [prev, cur, next];
    if val > 0.0 {
        for p in planes {
            for rr in r - 1..=r + 1 {
                let row = &p.data[rr * w + c - 1..rr * w + c + 2];
                if row.iter().any(|&x| x > val) {
                    return false;
                }
            }
        }
    } else {
        for p in planes {
            for rr in r - 1..=r + 1 {
                let row = &p.data[rr * w + c - 1..rr * w + c + 2];
                if row.iter().any(|&x| x < val) {
                    return false;
                }
            }
        }
    }
    true
}

#[allow(clippy::too_many_arguments)]
fn refine(
    oct: &Octave,
    octave: usize,
    layer: usize,
    r: usize,
    c: usize,
    params: &SiftParams,
    s: usize,
    sigma: f32,
) -> Option<Candidate> {
    let (w, h) = (oct.dog[0].w, oct.dog[0].h);
    let (mut layer, mut r, mut c) = (layer as isize, r as isize, c as isize);
    let mut offset = Vector3::zeros();
    let mut converged = false;
    for _ in 0..MAX_INTERP_STEPS {
        let (grad, hess) = derivatives(&oct.dog, layer as usize, r as usize, c as usize);
        let x = hess.lu().solve(&(-grad))?;
        offset = x;
        if x.iter().all(|v| v.abs() < 0.5) {
            converged = true;
            break;
        }
        if x.iter().any(|v| v.abs() > 1e6) {
            return None;
        }
        c += x[0].round() as isize;
        r += x[1].round() as isize;
        layer += x[2].round() as isize;
        if layer < 1
            || layer > s as isize
            || c < IMG_BORDER as isize
            || c >= (w - IMG_BORDER) as isize
            || r < IMG_BORDER as isize
            || r >= (h - IMG_BORDER) as isize
        {
            return None;
        }
    }
    if !converged {
        return None;
    }
    let (layer, r, c) = (layer as usize, r as usize, c as usize);
    let (grad, hess) = derivatives(&oct.dog, layer, r, c);
    let contr = oct.dog[layer].at(r, c) as f64 + 0.5 * grad.dot(&offset);
    if contr.abs() * (s as f64) < params.contrast_threshold {
        return None;
    }
    let (dxx, dyy, dxy) = (hess[(0, 0)], hess[(1, 1)], hess[(0, 1)]);
    let tr = dxx + dyy;
    let det = dxx * dyy - dxy * dxy;
    let e = params.edge_threshold;
    if det <= 0.0 || tr * tr * e >= (e + 1.0) * (e + 1.0) * det {
        return None;
    }
    Some(Candidate {
        octave,
        layer,
        r,
        c,
        x: (c as f64 + offset[0]) as f32,
        y: (r as f64 + offset[1]) as f32,
        scl: sigma * 2f32.powf((layer as f32 + offset[2] as f32) / s as f32),
        response: contr.abs() as f32,
    })
}

fn derivatives(dog: &[Plane], l: usize, r: usize, c: usize) -> (Vector3<f64>, Matrix3<f64>) {
    let d = |ll: usize, rr: usize, cc: usize| dog[ll].at(rr, cc) as f64;
    let v = d(l, r, c);
    let dx = (d(l, r, c + 1) - d(l, r, c - 1)) * 0.5;
    let dy = (d(l, r + 1, c) - d(l, r - 1, c)) * 0.5;
    let ds = (d(l + 1, r, c) - d(l - 1, r, c)) * 0.5;
    let dxx = d(l, r, c + 1) + d(l, r, c - 1) - 2.0 * v;
    let dyy = d(l, r + 1, c) + d(l, r - 1, c) - 2.0 * v;
    let dss = d(l + 1, r, c) + d(l - 1, r, c) - 2.0 * v;
    let dxy = (d(l, r + 1, c + 1) - d(l, r + 1, c - 1) - d(l, r - 1, c + 1) + d(l, r - 1, c - 1)) * 0.25;
    let dxs = (d(l + 1, r, c + 1) - d(l + 1, r, c - 1) - d(l - 1, r, c + 1) + d(l - 1, r, c - 1)) * 0.25;
    let dys = (d(l + 1, r + 1, c) - d(l + 1, r - 1, c) - d(l - 1, r + 1, c) + d(l - 1, r - 1, c)) * 0.25;
    (
        Vector3::new(dx, dy, ds),
        Matrix3::new(dxx, dxy, dxs, dxy, dyy, dys, dxs, dys, dss),
    )
}

/// Polynomial atan2, max error about 1e-4 rad.
#[inline]
fn fast_atan2(y: f32, x: f32) -> f32 {
    let (ax, ay) = (x.abs(), y.abs());
    if ax == 0.0 && ay == 0.0 {
        return 0.0;
    }
    let (num, den, swap) = if ay <= ax { (ay, ax, false) } else { (ax, ay, true) };
    let t = num / den;
    let t2 = t * t;
    let mut a = t * (0.999_866 + t2 * (-0.330_299_5 + t2 * (0.180_141 + t2 * (-0.085_133 + t2 * 0.020_835_1))));
    if swap {
        a = std::f32::consts::FRAC_PI_2 - a;
    }
    if x < 0.0 {
        a = PI - a;
    }
    if y < 0.0 {
        -a
    } else {
        a
    }
}

/// `exp(k * i^2)` for `i` in `-radius..=radius`.
fn gauss_table(radius: isize, k: f32) -> Vec<f32> {
    (-radius..=radius).map(|i| ((i * i) as f32 * k).exp()).collect()
}

fn orientations(g: &Plane, r: usize, c: usize, scl: f32) -> Vec<f32> {
    let radius = (ORI_RADIUS * scl).round() as isize;
    let sigma_w = ORI_SIG_FCTR * scl;
    let denom = -1.0 / (2.0 * sigma_w * sigma_w);
    let mut hist = [0.0f32; ORI_HIST_BINS];
    let wt = gauss_table(radius, denom);
    for i in -radius..=radius {
        let y = r as isize + i;
        if y <= 0 || y >= g.h as isize - 1 {
            continue;
        }
        for j in -radius..=radius {
            let x = c as isize + j;
            if x <= 0 || x >= g.w as isize - 1 {
                continue;
            }
            let (y, x) = (y as usize, x as usize);
            let dx = g.at(y, x + 1) - g.at(y, x - 1);
            let dy = g.at(y + 1, x) - g.at(y - 1, x);
            let mag = (dx * dx + dy * dy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let weight = wt[(i + radius) as usize] * wt[(j + radius) as usize];
            let ang = fast_atan2(dy, dx);
            let bin = ((ang * ORI_HIST_BINS as f32 / (2.0 * PI)).round() as isize)
                .rem_euclid(ORI_HIST_BINS as isize) as usize;
            hist[bin] += weight * mag;
        }
    }
    let n = ORI_HIST_BINS;
    let smooth: Vec<f32> = (0..n)
        .map(|i| {
            let at = |k: isize| hist[(i as isize + k).rem_euclid(n as isize) as usize];
            (at(-2) + at(2)) * (1.0 / 16.0) + (at(-1) + at(1)) * (4.0 / 16.0) + at(0) * (6.0 / 16.0)
        })
        .collect();
    let max = smooth.iter().cloned().fold(0.0f32, f32::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for i in 0..n {
        let l = smooth[(i + n - 1) % n];
        let rgt = smooth[(i + 1) % n];
        let v = smooth[i];
        if v > l && v > rgt && v >= ORI_PEAK_RATIO * max {
            let bin = i as f32 + 0.5 * (l - rgt) / (l - 2.0 * v + rgt);
            let mut a = bin * 2.0 * PI / n as f32;
            if a >= PI {
                a -= 2.0 * PI;
            }
            if a < -PI {
                a += 2.0 * PI;
            }
            out.push(a);
        }
    }
    out
}

fn descriptor(
    g: &Plane,
    mask: &[bool],
    r: usize,
    c: usize,
    angle: f32,
    scl: f32,
) -> Option<Descriptor> {
    let d = DESCR_WIDTH;
    let n = DESCR_HIST_BINS;
    let hist_width = DESCR_SCL_FCTR * scl;
    let (sin_t, cos_t) = angle.sin_cos();
    let (sin_t, cos_t) = (sin_t / hist_width, cos_t / hist_width);
    let bins_per_rad = n as f32 / (2.0 * PI);
    let exp_scale = -1.0 / (d as f32 * d as f32 * 0.5);
    let radius = ((hist_width * std::f32::consts::SQRT_2 * (d as f32 + 1.0) * 0.5).round())
        .min(((g.w * g.w + g.h * g.h) as f32).sqrt()) as isize;

    let stride = n + 2;
    let mut hist = vec![0.0f32; (d + 2) * (d + 2) * stride];
    let mut total = 0usize;
    let mut invalid = 0usize;
    // rotation preserves the radius, so the window weight is separable
    let wt = gauss_table(radius, exp_scale / (hist_width * hist_width));
    for i in -radius..=radius {
        for j in -radius..=radius {
            let c_rot = j as f32 * cos_t + i as f32 * sin_t;
            let r_rot = -(j as f32) * sin_t + i as f32 * cos_t;
            let rbin = r_rot + d as f32 / 2.0 - 0.5;
            let cbin = c_rot + d as f32 / 2.0 - 0.5;
            if !(rbin > -1.0 && rbin < d as f32 && cbin > -1.0 && cbin < d as f32) {
                continue;
            }
            let y = r as isize + i;
            let x = c as isize + j;
            total += 1;
            if y <= 0 || y >= g.h as isize - 1 || x <= 0 || x >= g.w as isize - 1 {
                invalid += 1;
                continue;
            }
            let (y, x) = (y as usize, x as usize);
            if !mask[y * g.w + x] {
                invalid += 1;
            }
            let dx = g.at(y, x + 1) - g.at(y, x - 1);
            let dy = g.at(y + 1, x) - g.at(y - 1, x);
            let mag = (dx * dx + dy * dy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let weight = wt[(i + radius) as usize] * wt[(j + radius) as usize];
            let mut obin = (fast_atan2(dy, dx) - angle) * bins_per_rad;
            obin = obin.rem_euclid(n as f32);
            let (r0, c0, o0) = (rbin.floor(), cbin.floor(), obin.floor());
            let (fr, fc, fo) = (rbin - r0, cbin - c0, obin - o0);
            let (r0, c0) = ((r0 as isize + 1) as usize, (c0 as isize + 1) as usize);
            let o0 = (o0 as usize) % n;
            let v = mag * weight;
            let v_r1 = v * fr;
            let v_r0 = v - v_r1;
            let v_rc11 = v_r1 * fc;
            let v_rc10 = v_r1 - v_rc11;
            let v_rc01 = v_r0 * fc;
            let v_rc00 = v_r0 - v_rc01;
            let idx = (r0 * (d + 2) + c0) * stride + o0;
            let row = (d + 2) * stride;
            let mut add = |base: usize, val: f32| {
                let v1 = val * fo;
                hist[base] += val - v1;
                hist[base + 1] += v1;
            };
            add(idx, v_rc00);
            add(idx + stride, v_rc01);
            add(idx + row, v_rc10);
            add(idx + row + stride, v_rc11);
        }
    }
    if total == 0 || invalid as f32 > MAX_INVALID_FRACTION * total as f32 {
        return None;
    }

    let mut desc = [0.0f32; DESCRIPTOR_DIM];
    for i in 0..d {
        for j in 0..d {
            let idx = ((i + 1) * (d + 2) + (j + 1)) * stride;
            hist[idx] += hist[idx + n];
            hist[idx + 1] += hist[idx + n + 1];
            for k in 0..n {
                desc[(i * d + j) * n + k] = hist[idx + k];
            }
        }
    }
    let norm = desc.iter().map(|v| v * v).sum::<f32>().sqrt();
    if norm <= 0.0 {
        return None;
    }
    let thr = DESCR_MAG_THR * norm;
    desc.iter_mut().for_each(|v| *v = v.min(thr));
    let norm = desc.iter().map(|v| v * v).sum::<f32>().sqrt();
    if norm <= 0.0 {
        return None;
    }
    desc.iter_mut().for_each(|v| *v /= norm);
    Some(desc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_atan2_accuracy() {
        for k in 0..3600 {
            let a = (k as f32 / 3600.0) * 2.0 * PI - PI;
            for r in [1e-3f32, 1.0, 250.0] {
                let (y, x) = (r * a.sin(), r * a.cos());
                let d = (fast_atan2(y, x) - y.atan2(x)).abs();
                assert!(d < 2e-4 || (d - 2.0 * PI).abs() < 2e-4, "{a} {d}");
            }
        }
        assert_eq!(fast_atan2(0.0, 0.0), 0.0);
    }
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn image_from(w: usize, h: usize, f: impl Fn(usize, usize) -> f32) -> BevImage {
        let mut img = BevImage::empty(w, h, 0.33, [0, 0]);
        for v in 0..h {
            for u in 0..w {
                let i = img.index(u, v);
                img.intensity[i] = f(u, v);
                img.mask[i] = true;
            }
        }
        img
    }

    /// Smooth random texture: sum of random Gaussian bumps.
    fn texture(w: usize, h: usize, seed: u64) -> BevImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bumps: Vec<(f32, f32, f32, f32)> = (0..(w * h / 60))
            .map(|_| {
                (
                    rng.gen_range(0.0..w as f32),
                    rng.gen_range(0.0..h as f32),
                    rng.gen_range(1.0..4.0),
                    rng.gen_range(-0.3..0.6),
                )
            })
            .collect();
        image_from(w, h, |u, v| {
            let mut acc = 0.2;
            for &(x, y, s, a) in &bumps {
                let d2 = (u as f32 - x).powi(2) + (v as f32 - y).powi(2);
                if d2 < 16.0 * s * s {
                    acc += a * (-d2 / (2.0 * s * s)).exp();
                }
            }
            acc.clamp(0.0, 1.0)
        })
    }

    #[test]
    fn zero_image_has_no_features() {
        let img = image_from(64, 64, |_, _| 0.0);
        assert!(extract_sift(&img, &SiftParams::default()).is_empty());
        let img = image_from(64, 64, |_, _| 0.4);
        assert!(extract_sift(&img, &SiftParams::default()).is_empty());
    }

    #[test]
    fn isolated_blobs_are_found() {
        let centers: Vec<(usize, usize)> = (0..10).map(|i| (20 + (i % 5) * 25, 25 + (i / 5) * 40)).collect();
        let img = image_from(150, 100, |u, v| {
            let bright = centers
                .iter()
                .any(|&(cx, cy)| u.abs_diff(cx) <= 1 && v.abs_diff(cy) <= 1);
            if bright {
                0.9
            } else {
                0.1
            }
        });
        let fs = extract_sift(&img, &SiftParams::default());
        let mut found = 0;
        for &(cx, cy) in &centers {
            if fs.keypoints.iter().any(|k| {
                (k.u - cx as f64).abs() <= 2.0 && (k.v - cy as f64).abs() <= 2.0
            }) {
                found += 1;
            }
        }
        assert!(found >= 8, "found {found} of 10 blobs among {} keypoints", fs.len());
        for k in &fs.keypoints {
            let near = centers
                .iter()
                .any(|&(cx, cy)| (k.u - cx as f64).hypot(k.v - cy as f64) <= 2.0);
            assert!(near, "spurious keypoint at ({}, {})", k.u, k.v);
        }
    }

    #[test]
    fn deterministic() {
        let img = texture(96, 96, 4);
        let a = extract_sift(&img, &SiftParams::default());
        let b = extract_sift(&img, &SiftParams::default());
        assert!(!a.is_empty());
        assert_eq!(a, b);
    }

    #[test]
    fn descriptors_are_unit_norm() {
        let fs = extract_sift(&texture(96, 96, 5), &SiftParams::default());
        for d in &fs.descriptors {
            let n = d.iter().map(|v| v * v).sum::<f32>().sqrt();
            assert!((n - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn translation_equivariance() {
        let big = texture(160, 160, 6);
        let crop = |du: usize, dv: usize| {
            image_from(120, 120, |u, v| big.intensity[big.index(u + du, v + dv)])
        };
        let a = extract_sift(&crop(16, 16), &SiftParams::default());
        let b = extract_sift(&crop(8, 24), &SiftParams::default());
        // content shifted by (+8, -8) between a and b
        let mut checked = 0;
        let mut ok = 0;
        for ka in &a.keypoints {
            let (eu, ev) = (ka.u + 8.0, ka.v - 8.0);
            let margin = 3.0 * ka.scale * 4.0;
            if eu < margin || ev < margin || eu > 120.0 - margin || ev > 120.0 - margin {
                continue;
            }
            checked += 1;
            if b.keypoints.iter().any(|kb| (kb.u - eu).abs() <= 0.5 && (kb.v - ev).abs() <= 0.5) {
                ok += 1;
            }
        }
        assert!(checked > 5, "only {checked} interior keypoints");
        assert_eq!(ok, checked);
    }

    #[test]
    fn rotation_invariance_quarter_turn() {
        let n = 128;
        let img = texture(n, n, 7);
        // rotate content by +90 degrees: (u, v) -> (n-1-v, u)
        let rot = image_from(n, n, |u, v| img.intensity[img.index(v, n - 1 - u)]);
        let a = extract_sift(&img, &SiftParams::default());
        let b = extract_sift(&rot, &SiftParams::default());
        let mut pairs = 0;
        let mut good = 0;
        for (ka, da) in a.keypoints.iter().zip(&a.descriptors) {
            let (eu, ev) = ((n - 1) as f64 - ka.v, ka.u);
            let best = b
                .keypoints
                .iter()
                .zip(&b.descriptors)
                .filter(|(kb, _)| (kb.u - eu).abs() <= 1.0 && (kb.v - ev).abs() <= 1.0)
                .map(|(_, db)| {
                    da.iter().zip(db).map(|(x, y)| (x - y) * (x - y)).sum::<f32>().sqrt()
                })
                .fold(f32::INFINITY, f32::min);
            if best.is_finite() {
                pairs += 1;
                if best < 0.5 {
                    good += 1;
                }
            }
        }
        assert!(pairs >= 10, "{pairs} pairs");
        assert!(good as f64 >= 0.8 * pairs as f64, "{good}/{pairs}");
    }

    #[test]
    fn masked_region_yields_nothing() {
        let mut img = texture(96, 96, 8);
        img.mask.iter_mut().for_each(|m| *m = false);
        assert!(extract_sift(&img, &SiftParams::default()).is_empty());
    }
}
