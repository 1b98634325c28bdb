//! Three-channel bird's-eye-view images (intensity, slope, height variance)
//! rendered from ground grid snapshots.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ground_grid::GridSnapshot;

/// Extra gain on the slope channel so typical terrain slopes span the 8-bit range.
pub const SLOPE_DISPLAY_SCALE: f64 = 10.0;

/// Minimum ground confidence for a slope observation.
pub const SLOPE_CONFIDENCE: f32 = 0.5;

/// Per-sensor multipliers mapping raw cell statistics into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationFactors {
    pub intensity: f64,
    pub slope: f64,
    pub variance: f64,
}

impl NormalizationFactors {
    pub fn for_sensor(name: &str) -> Option<Self> {
        let (i, s, v) = match name {
            "hdl64e" => (2.670, 0.09, 0.35),
            "os1_64" => (1.000, 0.10, 0.35),
            "os2_128" => (0.005, 0.10, 0.35),
            "aeva" => (0.013, 0.10, 0.35),
            "avia" => (0.020, 0.09, 0.35),
            _ => return None,
        };
        Some(Self {
            intensity: i,
            slope: s,
            variance: v,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if [self.intensity, self.slope, self.variance]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite())
        {
            Ok(())
        } else {
            Err(Error::Config("normalization factors must be positive".into()))
        }
    }
}

/// Square-pixel raster in world-aligned cells. Pixel `(u, v)` (column, row)
/// covers world cell `origin + (u, v)`; its centre lies at
/// `(origin + (u, v) + 0.5) * resolution`.
#[derive(Debug, Clone, PartialEq)]
pub struct BevImage {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub origin: [i64; 2],
    pub stamp: f64,
    pub intensity: Vec<f32>,
    pub slope: Vec<f32>,
    pub variance: Vec<f32>,
    pub mask: Vec<bool>,
    /// Unnormalised z variance (m^2), kept for map fusion weighting.
    pub raw_variance: Option<Vec<f32>>,
}

impl BevImage {
    pub fn empty(width: usize, height: usize, resolution: f64, origin: [i64; 2]) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            resolution,
            origin,
            stamp: 0.0,
            intensity: vec![0.0; n],
            slope: vec![0.0; n],
            variance: vec![0.0; n],
            mask: vec![false; n],
            raw_variance: None,
        }
    }

    pub fn index(&self, u: usize, v: usize) -> usize {
        v * self.width + u
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// World coordinates of a (sub)pixel position.
    pub fn pixel_to_world(&self, u: f64, v: f64) -> [f64; 2] {
        [
            (self.origin[0] as f64 + u + 0.5) * self.resolution,
            (self.origin[1] as f64 + v + 0.5) * self.resolution,
        ]
    }

    pub fn world_to_pixel(&self, x: f64, y: f64) -> [f64; 2] {
        [
            x / self.resolution - 0.5 - self.origin[0] as f64,
            y / self.resolution - 0.5 - self.origin[1] as f64,
        ]
    }

    /// Copy rotated by `angle` about the image centre (nearest neighbour).
    /// Content at world offset `d` from the centre moves to `R(angle) d`.
    pub fn rotated(&self, angle: f64) -> BevImage {
        let mut out = BevImage::empty(self.width, self.height, self.resolution, self.origin);
        out.stamp = self.stamp;
        let cx = (self.width as f64 - 1.0) / 2.0;
        let cy = (self.height as f64 - 1.0) / 2.0;
        let (s, c) = angle.sin_cos();
        for v in 0..self.height {
            for u in 0..self.width {
                let dx = u as f64 - cx;
                let dy = v as f64 - cy;
                // inverse rotation to find the source pixel
                let su = (c * dx + s * dy + cx).round();
                let sv = (-s * dx + c * dy + cy).round();
                if su < 0.0 || sv < 0.0 || su >= self.width as f64 || sv >= self.height as f64 {
                    continue;
                }
                let src = self.index(su as usize, sv as usize);
                let dst = out.index(u, v);
                out.intensity[dst] = self.intensity[src];
                out.slope[dst] = self.slope[src];
                out.variance[dst] = self.variance[src];
                out.mask[dst] = self.mask[src];
            }
        }
        out
    }
}

/// 3x3 ground-height neighbourhood (`heights[row][col]`, row along +y).
#[derive(Debug, Clone, Copy)]
pub struct HeightNeighborhood {
    pub heights: [[Option<f64>; 3]; 3],
    pub center_confidence: f64,
}

fn axis_gradient(lo: Option<f64>, mid: f64, hi: Option<f64>, cell_size: f64) -> Option<f64> {
    match (lo, hi) {
        (Some(a), Some(b)) => Some((b - a) / (2.0 * cell_size)),
        (None, Some(b)) => Some((b - mid) / cell_size),
        (Some(a), None) => Some((mid - a) / cell_size),
        (None, None) => None,
    }
}

/// `1 - N_z / |N|` for the surface normal estimated from the neighbourhood.
/// Returns 0 (no observation) when the centre is not confidently ground or
/// an axis lacks a valid neighbour.
pub fn slope_from_heights(n: &HeightNeighborhood, cell_size: f64) -> f64 {
    if n.center_confidence <= SLOPE_CONFIDENCE as f64 {
        return 0.0;
    }
    let Some(mid) = n.heights[1][1] else {
        return 0.0;
    };
    let dx = axis_gradient(n.heights[1][0], mid, n.heights[1][2], cell_size);
    let dy = axis_gradient(n.heights[0][1], mid, n.heights[2][1], cell_size);
    let (Some(dx), Some(dy)) = (dx, dy) else {
        return 0.0;
    };
    // N = (-dz/dx, -dz/dy, 1)
    let norm = (dx * dx + dy * dy + 1.0).sqrt();
    (1.0 - 1.0 / norm).clamp(0.0, 1.0)
}

/// Element-wise minimum of non-zero slope observations at world-fixed cells.
/// Zero means "never observed".
#[derive(Debug, Clone, PartialEq)]
pub struct SlopeState {
    pub size: usize,
    pub origin: [i64; 2],
    pub values: Vec<f32>,
}

impl SlopeState {
    pub fn new(size: usize, origin: [i64; 2]) -> Self {
        Self {
            size,
            origin,
            values: vec![0.0; size * size],
        }
    }

    /// Scrolls to a new origin; cells that leave are forgotten.
    pub fn align_to(&mut self, origin: [i64; 2]) {
        if origin == self.origin {
            return;
        }
        let n = self.size as i64;
        let (dx, dy) = (origin[0] - self.origin[0], origin[1] - self.origin[1]);
        let mut values = vec![0.0; self.values.len()];
        for v in 0..n {
            let ov = v + dy;
            if !(0..n).contains(&ov) {
                continue;
            }
            for u in 0..n {
                let ou = u + dx;
                if (0..n).contains(&ou) {
                    values[(v * n + u) as usize] = self.values[(ov * n + ou) as usize];
                }
            }
        }
        self.values = values;
        self.origin = origin;
    }

    pub fn observe(&mut self, index: usize, slope: f32) {
        if slope > 0.0 {
            let cur = &mut self.values[index];
            if *cur == 0.0 || slope < *cur {
                *cur = slope;
            }
        }
    }
}

/// Renders the BEV image for the current grid snapshot, folding this frame's
/// slope observations into `slope_state`.
pub fn render_bev(
    grid: &GridSnapshot,
    factors: &NormalizationFactors,
    slope_state: &mut SlopeState,
) -> Result<BevImage> {
    if slope_state.origin != grid.origin || slope_state.size != grid.size {
        return Err(Error::Misaligned(format!(
            "grid origin {:?} size {}, slope state origin {:?} size {}",
            grid.origin, grid.size, slope_state.origin, slope_state.size
        )));
    }
    let n = grid.size;
    let mut img = BevImage::empty(n, n, grid.cell_size, grid.origin);
    let mut raw_var = vec![0.0f32; n * n];

    let height_at = |u: isize, v: isize| -> Option<f64> {
        if u < 0 || v < 0 || u >= n as isize || v >= n as isize {
            return None;
        }
        let c = grid.cell(u as usize, v as usize);
        (c.intensity_weight > 0.0).then_some(c.ground_height as f64)
    };

    for v in 0..n {
        for u in 0..n {
            let idx = v * n + u;
            let c = &grid.cells[idx];
            if c.ground_confidence > SLOPE_CONFIDENCE {
                let mut heights = [[None; 3]; 3];
                for (r, row) in heights.iter_mut().enumerate() {
                    for (q, h) in row.iter_mut().enumerate() {
                        *h = height_at(u as isize + q as isize - 1, v as isize + r as isize - 1);
                    }
                }
                let s = slope_from_heights(
                    &HeightNeighborhood {
                        heights,
                        center_confidence: c.ground_confidence as f64,
                    },
                    grid.cell_size,
                );
                slope_state.observe(idx, s as f32);
            }
            if c.intensity_weight > 0.0 {
                img.mask[idx] = true;
                img.intensity[idx] = (c.intensity_mean as f64 * factors.intensity).clamp(0.0, 1.0) as f32;
                img.slope[idx] = (slope_state.values[idx] as f64 * factors.slope * SLOPE_DISPLAY_SCALE)
                    .clamp(0.0, 1.0) as f32;
                img.variance[idx] =
                    (c.height_variance as f64 * factors.variance).clamp(0.0, 1.0) as f32;
                raw_var[idx] = c.height_variance;
            }
        }
    }
    img.raw_variance = Some(raw_var);
    Ok(img)
}

/// Interleaved 8-bit raster (`[intensity, slope, variance]` per pixel).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedBev {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

pub fn quantize_value(x: f32) -> u8 {
    ((x.clamp(0.0, 1.0) as f64) * 255.0 + 0.5).floor() as u8
}

pub fn dequantize_value(q: u8) -> f32 {
    q as f32 / 255.0
}

pub fn quantize(img: &BevImage) -> QuantizedBev {
    let mut data = vec![0u8; img.width * img.height * 3];
    for i in 0..img.width * img.height {
        if img.mask[i] {
            data[3 * i] = quantize_value(img.intensity[i]);
            data[3 * i + 1] = quantize_value(img.slope[i]);
            data[3 * i + 2] = quantize_value(img.variance[i]);
        }
    }
    QuantizedBev {
        width: img.width,
        height: img.height,
        data,
    }
}
