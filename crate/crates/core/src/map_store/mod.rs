//! Prior-map construction, tiled storage and local cropping.

mod geotiff;
mod reader;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

pub use geotiff::{encode_geotiff, read_geotiff, read_info, write_geotiff, write_geotiff_with, Compression, GeoTiffInfo};
pub use reader::TiledMapReader;

use crate::bev::{dequantize_value, quantize_value, BevImage};
use crate::error::{Error, Result};
use crate::geom::Pose2D;

pub const TILE_SIZE: usize = 256;
pub const MAX_WEIGHT: f64 = 1000.0;
pub const DEFAULT_RESOLUTION: f64 = 0.33;

/// Intensity fusion weight for a raw height variance (m^2).
pub fn inverse_variance_weight(variance: f64) -> f64 {
    if variance <= 0.0 {
        MAX_WEIGHT
    } else {
        (1.0 / variance).min(MAX_WEIGHT)
    }
}

/// Fusion state of one map pixel.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PixelFusion {
    pub intensity_sum: f64,
    pub weight_sum: f64,
    /// 0 while no nonzero slope has been seen.
    pub slope_min: f32,
    pub variance_sum: f64,
    pub count: u32,
}

impl PixelFusion {
    pub fn observe(&mut self, intensity: f64, raw_variance: Option<f64>, slope: f32, variance: f32) {
        let w = raw_variance.map_or(1.0, inverse_variance_weight);
        self.intensity_sum += w * intensity;
        self.weight_sum += w;
        if slope > 0.0 && (self.slope_min == 0.0 || slope < self.slope_min) {
            self.slope_min = slope;
        }
        self.variance_sum += variance as f64;
        self.count += 1;
    }

    pub fn intensity(&self) -> f64 {
        self.intensity_sum / self.weight_sum
    }

    pub fn variance(&self) -> f64 {
        self.variance_sum / self.count as f64
    }

    pub fn is_observed(&self) -> bool {
        self.weight_sum > 0.0
    }
}

/// Global tile index containing global pixel `p`.
fn tile_of(p: i64) -> i64 {
    p.div_euclid(TILE_SIZE as i64)
}

/// Fuses pose-tagged BEV images into a growing set of map tiles.
#[derive(Debug, Clone)]
pub struct MapAccumulator {
    resolution: f64,
    tiles: HashMap<(i64, i64), Vec<PixelFusion>>,
    images: usize,
}

impl MapAccumulator {
    pub fn new(resolution: f64) -> Self {
        Self {
            resolution,
            tiles: HashMap::new(),
            images: 0,
        }
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn image_count(&self) -> usize {
        self.images
    }

    /// Fusion state of a global map pixel, if touched.
    pub fn pixel(&self, gx: i64, gy: i64) -> Option<&PixelFusion> {
        let t = self.tiles.get(&(tile_of(gx), tile_of(gy)))?;
        let (lx, ly) = (gx.rem_euclid(TILE_SIZE as i64), gy.rem_euclid(TILE_SIZE as i64));
        t.get(ly as usize * TILE_SIZE + lx as usize).filter(|p| p.is_observed())
    }

    fn pixel_mut(&mut self, gx: i64, gy: i64) -> &mut PixelFusion {
        let t = self
            .tiles
            .entry((tile_of(gx), tile_of(gy)))
            .or_insert_with(|| vec![PixelFusion::default(); TILE_SIZE * TILE_SIZE]);
        let (lx, ly) = (gx.rem_euclid(TILE_SIZE as i64), gy.rem_euclid(TILE_SIZE as i64));
        &mut t[ly as usize * TILE_SIZE + lx as usize]
    }

    /// Splats `img` (expressed in its own frame) into the map through
    /// `pose` (map-from-image), sampling by nearest neighbour.
    pub fn accumulate(&mut self, img: &BevImage, pose: &Pose2D) -> Result<()> {
        if (img.resolution - self.resolution).abs() > 1e-12 {
            return Err(Error::ResolutionMismatch {
                expected: self.resolution,
                actual: img.resolution,
            });
        }
        self.images += 1;
        let res = self.resolution;
        let raw = img.raw_variance.as_deref();
        let sample = |acc: &mut Self, src: usize, gx: i64, gy: i64| {
            if !img.mask[src] {
                return;
            }
            acc.pixel_mut(gx, gy).observe(
                img.intensity[src] as f64,
                raw.map(|r| r[src] as f64),
                img.slope[src],
                img.variance[src],
            );
        };
        let yaw = crate::geom::wrap_angle(pose.yaw);
        let tx = pose.x / res;
        let ty = pose.y / res;
        if yaw == 0.0 && tx == tx.round() && ty == ty.round() {
            // pixel-aligned shift: one-to-one copy
            let (dx, dy) = (tx.round() as i64, ty.round() as i64);
            for v in 0..img.height {
                for u in 0..img.width {
                    let gx = img.origin[0] + u as i64 + dx;
                    let gy = img.origin[1] + v as i64 + dy;
                    sample(self, img.index(u, v), gx, gy);
                }
            }
            return Ok(());
        }
        // general pose: pull every covered map pixel from the image
        let corners = [
            img.pixel_to_world(-0.5, -0.5),
            img.pixel_to_world(img.width as f64 - 0.5, -0.5),
            img.pixel_to_world(-0.5, img.height as f64 - 0.5),
            img.pixel_to_world(img.width as f64 - 0.5, img.height as f64 - 0.5),
        ]
        .map(|c| pose.apply(c));
        let min_x = corners.iter().map(|c| c[0]).fold(f64::INFINITY, f64::min);
        let max_x = corners.iter().map(|c| c[0]).fold(f64::NEG_INFINITY, f64::max);
        let min_y = corners.iter().map(|c| c[1]).fold(f64::INFINITY, f64::min);
        let max_y = corners.iter().map(|c| c[1]).fold(f64::NEG_INFINITY, f64::max);
        let inv = pose.inverse();
        for gy in (min_y / res).floor() as i64..=(max_y / res).floor() as i64 {
            for gx in (min_x / res).floor() as i64..=(max_x / res).floor() as i64 {
                let w = inv.apply([(gx as f64 + 0.5) * res, (gy as f64 + 0.5) * res]);
                let p = img.world_to_pixel(w[0], w[1]);
                let (u, v) = (p[0].round(), p[1].round());
                if u < 0.0 || v < 0.0 || u >= img.width as f64 || v >= img.height as f64 {
                    continue;
                }
                sample(self, img.index(u as usize, v as usize), gx, gy);
            }
        }
        Ok(())
    }

    pub fn finalize(&self) -> Result<PriorMap> {
        if self.images == 0 || self.tiles.is_empty() {
            return Err(Error::EmptyAccumulator);
        }
        let covered: Vec<(&(i64, i64), &Vec<PixelFusion>)> = self
            .tiles
            .iter()
            .filter(|(_, t)| t.iter().any(|p| p.is_observed()))
            .collect();
        if covered.is_empty() {
            return Err(Error::EmptyAccumulator);
        }
        let tx0 = covered.iter().map(|(k, _)| k.0).min().unwrap();
        let ty0 = covered.iter().map(|(k, _)| k.1).min().unwrap();
        let tx1 = covered.iter().map(|(k, _)| k.0).max().unwrap();
        let ty1 = covered.iter().map(|(k, _)| k.1).max().unwrap();
        let mut map = PriorMap::new(
            self.resolution,
            [tx0 * TILE_SIZE as i64, ty0 * TILE_SIZE as i64],
            (tx1 - tx0 + 1) as usize,
            (ty1 - ty0 + 1) as usize,
        );
        for (&(tx, ty), t) in covered {
            let mut data = vec![0u8; TILE_SIZE * TILE_SIZE * 3];
            for (i, p) in t.iter().enumerate() {
                if !p.is_observed() {
                    continue;
                }
                let px = encode_pixel(p.intensity() as f32, p.slope_min, p.variance() as f32);
                data[3 * i..3 * i + 3].copy_from_slice(&px);
            }
            map.tiles.insert(((tx - tx0) as usize, (ty - ty0) as usize), Arc::new(data));
        }
        Ok(map)
    }
}

/// Quantized pixel; a valid pixel never encodes as all zeros, since zero
/// marks "no data" in stored maps.
pub fn encode_pixel(intensity: f32, slope: f32, variance: f32) -> [u8; 3] {
    let mut px = [
        quantize_value(intensity),
        quantize_value(slope),
        quantize_value(variance),
    ];
    if px == [0, 0, 0] {
        px[0] = 1;
    }
    px
}

/// Tiled 3-channel 8-bit map. Tile `(col, row)` covers global pixels
/// `origin + (col, row) * 256 ..`, rows running along +y. A pixel is valid
/// when any channel is nonzero.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorMap {
    pub resolution: f64,
    pub origin: [i64; 2],
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub tiles: BTreeMap<(usize, usize), Arc<Vec<u8>>>,
}

impl PriorMap {
    pub fn new(resolution: f64, origin: [i64; 2], tiles_x: usize, tiles_y: usize) -> Self {
        Self {
            resolution,
            origin,
            tiles_x,
            tiles_y,
            tiles: BTreeMap::new(),
        }
    }

    pub fn width(&self) -> usize {
        self.tiles_x * TILE_SIZE
    }

    pub fn height(&self) -> usize {
        self.tiles_y * TILE_SIZE
    }

    /// Builds a map from a full raster (`[i, s, v]` interleaved, row along
    /// +y). Tiles without a single valid pixel are omitted.
    pub fn from_raster(resolution: f64, origin: [i64; 2], width: usize, height: usize, data: &[u8]) -> Self {
        let tiles_x = width.div_ceil(TILE_SIZE);
        let tiles_y = height.div_ceil(TILE_SIZE);
        let mut map = PriorMap::new(resolution, origin, tiles_x, tiles_y);
        for ty in 0..tiles_y {
            for tx in 0..tiles_x {
                let mut tile = vec![0u8; TILE_SIZE * TILE_SIZE * 3];
                let mut any = false;
                for ly in 0..TILE_SIZE {
                    let y = ty * TILE_SIZE + ly;
                    if y >= height {
                        break;
                    }
                    for lx in 0..TILE_SIZE {
                        let x = tx * TILE_SIZE + lx;
                        if x >= width {
                            break;
                        }
                        let s = 3 * (y * width + x);
                        let d = 3 * (ly * TILE_SIZE + lx);
                        tile[d..d + 3].copy_from_slice(&data[s..s + 3]);
                        any |= data[s..s + 3] != [0, 0, 0];
                    }
                }
                if any {
                    map.tiles.insert((tx, ty), Arc::new(tile));
                }
            }
        }
        map
    }

    /// Raw bytes of the full raster extent (3 bytes per pixel).
    pub fn raw_size(&self) -> usize {
        self.width() * self.height() * 3
    }

    pub fn pixel(&self, gx: i64, gy: i64) -> Option<[u8; 3]> {
        pixel_from(self, gx, gy)
    }
}

/// Read access to map tiles, shared by in-memory and file-backed maps.
pub trait TileSource {
    fn resolution(&self) -> f64;
    fn origin(&self) -> [i64; 2];
    fn tile_grid(&self) -> (usize, usize);
    fn tile(&self, col: usize, row: usize) -> Option<Arc<Vec<u8>>>;
}

impl TileSource for PriorMap {
    fn resolution(&self) -> f64 {
        self.resolution
    }

    fn origin(&self) -> [i64; 2] {
        self.origin
    }

    fn tile_grid(&self) -> (usize, usize) {
        (self.tiles_x, self.tiles_y)
    }

    fn tile(&self, col: usize, row: usize) -> Option<Arc<Vec<u8>>> {
        self.tiles.get(&(col, row)).cloned()
    }
}

fn pixel_from<S: TileSource + ?Sized>(map: &S, gx: i64, gy: i64) -> Option<[u8; 3]> {
    let o = map.origin();
    let (lx, ly) = (gx - o[0], gy - o[1]);
    let (tw, th) = map.tile_grid();
    if lx < 0 || ly < 0 || lx >= (tw * TILE_SIZE) as i64 || ly >= (th * TILE_SIZE) as i64 {
        return None;
    }
    let (lx, ly) = (lx as usize, ly as usize);
    let tile = map.tile(lx / TILE_SIZE, ly / TILE_SIZE)?;
    let i = 3 * ((ly % TILE_SIZE) * TILE_SIZE + lx % TILE_SIZE);
    let px = [tile[i], tile[i + 1], tile[i + 2]];
    (px != [0, 0, 0]).then_some(px)
}

/// Axis-aligned `size_px` square window centred on the map pixel that
/// contains `center`, dequantized to [0, 1].
pub fn crop_local<S: TileSource + ?Sized>(map: &S, center: &Pose2D, size_px: usize) -> BevImage {
    let res = map.resolution();
    let cx = (center.x / res).floor() as i64;
    let cy = (center.y / res).floor() as i64;
    let half = (size_px / 2) as i64;
    let origin = [cx - half, cy - half];
    let mut img = BevImage::empty(size_px, size_px, res, origin);
    let o = map.origin();
    let (tw, th) = map.tile_grid();
    // walk tile by tile so each tile is fetched once
    let (x0, y0) = (origin[0] - o[0], origin[1] - o[1]);
    let (x1, y1) = (x0 + size_px as i64, y0 + size_px as i64);
    let t = TILE_SIZE as i64;
    for trow in y0.max(0).div_euclid(t)..=((y1 - 1).min((th * TILE_SIZE) as i64 - 1)).div_euclid(t) {
        for tcol in x0.max(0).div_euclid(t)..=((x1 - 1).min((tw * TILE_SIZE) as i64 - 1)).div_euclid(t) {
            if trow < 0 || tcol < 0 {
                continue;
            }
            let Some(tile) = map.tile(tcol as usize, trow as usize) else {
                continue;
            };
            let ly0 = (trow * t).max(y0);
            let ly1 = ((trow + 1) * t).min(y1);
            let lx0 = (tcol * t).max(x0);
            let lx1 = ((tcol + 1) * t).min(x1);
            for ly in ly0..ly1 {
                for lx in lx0..lx1 {
                    let i = 3 * (((ly - trow * t) * t) + (lx - tcol * t)) as usize;
                    let px = &tile[i..i + 3];
                    if px == [0, 0, 0] {
                        continue;
                    }
                    let d = img.index((lx - x0) as usize, (ly - y0) as usize);
                    img.mask[d] = true;
                    img.intensity[d] = dequantize_value(px[0]);
                    img.slope[d] = dequantize_value(px[1]);
                    img.variance[d] = dequantize_value(px[2]);
                }
            }
        }
    }
    img
}
