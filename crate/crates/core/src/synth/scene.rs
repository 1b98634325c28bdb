use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planar ground patch: `z = height + gradient · (p - min)` inside `[min, max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundPatch {
    pub min: [f64; 2],
    pub max: [f64; 2],
    pub height: f64,
    #[serde(default)]
    pub gradient: [f64; 2],
}

impl GroundPatch {
    fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min[0] && x < self.max[0] && y >= self.min[1] && y < self.max[1]
    }

    fn z(&self, x: f64, y: f64) -> f64 {
        self.height + self.gradient[0] * (x - self.min[0]) + self.gradient[1] * (y - self.min[1])
    }
}

/// Painted road along a polyline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Road {
    pub points: Vec<[f64; 2]>,
    #[serde(default = "default_road_width")]
    pub width: f64,
    #[serde(default)]
    pub closed: bool,
    /// Solid edge lines.
    #[serde(default = "yes")]
    pub edge_lines: bool,
    /// Dashed centre line as (on, off) lengths in metres.
    #[serde(default = "default_dash")]
    pub center_dash: Option<[f64; 2]>,
    /// Random pictogram markings per 100 m of road.
    #[serde(default = "default_marking_density")]
    pub markings_per_100m: f64,
}

fn default_road_width() -> f64 {
    8.0
}
fn yes() -> bool {
    true
}
fn default_dash() -> Option<[f64; 2]> {
    Some([3.0, 6.0])
}
fn default_marking_density() -> f64 {
    8.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkingShape {
    Disc,
    Rect,
    Arrow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marking {
    pub center: [f64; 2],
    /// Half extents (rect, arrow) or radius in `size[0]` (disc).
    pub size: [f64; 2],
    #[serde(default)]
    pub yaw: f64,
    pub shape: MarkingShape,
    pub intensity: f64,
}

impl Marking {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.center[0], y - self.center[1]);
        let (s, c) = self.yaw.sin_cos();
        let (lx, ly) = (c * dx + s * dy, -s * dx + c * dy);
        match self.shape {
            MarkingShape::Disc => lx * lx + ly * ly <= self.size[0] * self.size[0],
            MarkingShape::Rect => lx.abs() <= self.size[0] && ly.abs() <= self.size[1],
            MarkingShape::Arrow => {
                // shaft on the back half, triangular head on the front half
                let (a, b) = (self.size[0], self.size[1]);
                if lx < -a || lx > a {
                    return false;
                }
                if lx <= 0.0 {
                    ly.abs() <= 0.35 * b
                } else {
                    ly.abs() <= b * (1.0 - lx / a)
                }
            }
        }
    }

    fn radius(&self) -> f64 {
        self.size[0].hypot(self.size[1])
    }
}

/// Static box standing on the ground.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxObstacle {
    pub center: [f64; 2],
    pub half: [f64; 2],
    #[serde(default)]
    pub yaw: f64,
    pub height: f64,
}

/// Box moving at constant velocity while `t_start <= t <= t_end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicBox {
    pub start: [f64; 2],
    pub velocity: [f64; 2],
    pub half: [f64; 2],
    #[serde(default)]
    pub yaw: f64,
    pub height: f64,
    pub t_start: f64,
    pub t_end: f64,
}

impl DynamicBox {
    pub fn at(&self, t: f64) -> Option<BoxObstacle> {
        if t < self.t_start || t > self.t_end {
            return None;
        }
        let dt = t - self.t_start;
        Some(BoxObstacle {
            center: [self.start[0] + self.velocity[0] * dt, self.start[1] + self.velocity[1] * dt],
            half: self.half,
            yaw: self.yaw,
            height: self.height,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    /// `[min_x, min_y, max_x, max_y]` in metres.
    pub extent: [f64; 4],
    /// Reflectivity of bare road surface.
    pub road_intensity: f64,
    /// Reflectivity away from roads; also the whole plane when there are no roads.
    pub base_intensity: f64,
    pub marking_intensity: f64,
    /// Amplitude of the smooth surface texture.
    pub texture_amplitude: f64,
    /// Lattice spacing of the coarse texture octave (m).
    pub texture_scale: f64,
    pub patches: Vec<GroundPatch>,
    pub roads: Vec<Road>,
    pub markings: Vec<Marking>,
    pub obstacles: Vec<BoxObstacle>,
    pub dynamic: Vec<DynamicBox>,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            extent: [-100.0, -100.0, 100.0, 100.0],
            road_intensity: 0.3,
            base_intensity: 0.3,
            marking_intensity: 0.9,
            texture_amplitude: 0.0,
            texture_scale: 2.0,
            patches: Vec::new(),
            roads: Vec::new(),
            markings: Vec::new(),
            obstacles: Vec::new(),
            dynamic: Vec::new(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: [f64; 2],
    b: [f64; 2],
    /// Arc length at `a`.
    s0: f64,
    road: usize,
}

/// Spatial hash over fixed-size square buckets.
#[derive(Debug, Clone)]
struct Buckets {
    size: f64,
    x0: f64,
    y0: f64,
    nx: usize,
    ny: usize,
    cells: Vec<Vec<u32>>,
}

impl Buckets {
    fn new(extent: [f64; 4], size: f64) -> Self {
        let nx = (((extent[2] - extent[0]) / size).ceil() as usize).max(1);
        let ny = (((extent[3] - extent[1]) / size).ceil() as usize).max(1);
        Self {
            size,
            x0: extent[0],
            y0: extent[1],
            nx,
            ny,
            cells: vec![Vec::new(); nx * ny],
        }
    }

    fn cell(&self, x: f64, y: f64) -> Option<usize> {
        let i = ((x - self.x0) / self.size).floor();
        let j = ((y - self.y0) / self.size).floor();
        (i >= 0.0 && j >= 0.0 && (i as usize) < self.nx && (j as usize) < self.ny)
            .then(|| j as usize * self.nx + i as usize)
    }

    /// Registers `id` in every bucket overlapping the box `[min, max]`.
    fn insert(&mut self, id: u32, min: [f64; 2], max: [f64; 2]) {
        let clampi = |v: f64, n: usize| (v.floor().max(0.0) as usize).min(n - 1);
        let i0 = clampi((min[0] - self.x0) / self.size, self.nx);
        let i1 = clampi((max[0] - self.x0) / self.size, self.nx);
        let j0 = clampi((min[1] - self.y0) / self.size, self.ny);
        let j1 = clampi((max[1] - self.y0) / self.size, self.ny);
        for j in j0..=j1 {
            for i in i0..=i1 {
                self.cells[j * self.nx + i].push(id);
            }
        }
    }

    fn get(&self, x: f64, y: f64) -> &[u32] {
        self.cell(x, y).map_or(&[], |c| &self.cells[c])
    }
}

const BUCKET: f64 = 8.0;
const EDGE_LINE_WIDTH: f64 = 0.15;
const EDGE_LINE_INSET: f64 = 0.3;

/// Immutable generated scene, queryable for height, reflectivity and
/// occupancy.
#[derive(Debug, Clone)]
pub struct Scene {
    pub spec: SceneSpec,
    /// Fixed markings plus those scattered along roads.
    pub markings: Vec<Marking>,
    segments: Vec<Segment>,
    seg_index: Buckets,
    mark_index: Buckets,
}

fn in_extent(e: &[f64; 4], p: [f64; 2]) -> bool {
    p[0] >= e[0] && p[0] <= e[2] && p[1] >= e[1] && p[1] <= e[3]
}

/// Deterministic lattice value in [0, 1).
fn lattice(ix: i64, iy: i64, seed: u64) -> f64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [ix as u64, iy as u64] {
        h ^= v.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h = (h ^ (h >> 30)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 31;
    }
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Smooth value noise in [0, 1).
fn value_noise(x: f64, y: f64, scale: f64, seed: u64) -> f64 {
    let (fx, fy) = (x / scale, y / scale);
    let (ix, iy) = (fx.floor(), fy.floor());
    let (tx, ty) = (fx - ix, fy - iy);
    let s = |t: f64| t * t * (3.0 - 2.0 * t);
    let (sx, sy) = (s(tx), s(ty));
    let (ix, iy) = (ix as i64, iy as i64);
    let a = lattice(ix, iy, seed);
    let b = lattice(ix + 1, iy, seed);
    let c = lattice(ix, iy + 1, seed);
    let d = lattice(ix + 1, iy + 1, seed);
    let top = a + (b - a) * sx;
    let bot = c + (d - c) * sx;
    top + (bot - top) * sy
}

fn overlap(a: &GroundPatch, b: &GroundPatch) -> Option<[f64; 4]> {
    let x0 = a.min[0].max(b.min[0]);
    let y0 = a.min[1].max(b.min[1]);
    let x1 = a.max[0].min(b.max[0]);
    let y1 = a.max[1].min(b.max[1]);
    (x0 < x1 && y0 < y1).then_some([x0, y0, x1, y1])
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let e = &self.extent;
        if !(e[2] > e[0] && e[3] > e[1]) {
            return Err(Error::Scene("extent must have positive size".into()));
        }
        if !(self.texture_scale > 0.0) {
            return Err(Error::Scene("texture_scale must be positive".into()));
        }
        for (i, p) in self.patches.iter().enumerate() {
            if !(p.max[0] > p.min[0] && p.max[1] > p.min[1]) {
                return Err(Error::Scene(format!("patch {i} is empty")));
            }
            if !in_extent(e, p.min) || !in_extent(e, p.max) {
                return Err(Error::Scene(format!("patch {i} outside extent")));
            }
        }
        for (i, a) in self.patches.iter().enumerate() {
            for (j, b) in self.patches.iter().enumerate().skip(i + 1) {
                let Some(o) = overlap(a, b) else { continue };
                let corners = [[o[0], o[1]], [o[2], o[1]], [o[0], o[3]], [o[2], o[3]]];
                if corners.iter().any(|c| (a.z(c[0], c[1]) - b.z(c[0], c[1])).abs() > 1e-9) {
                    return Err(Error::Scene(format!("patches {i} and {j} overlap with different heights")));
                }
            }
        }
        for (i, r) in self.roads.iter().enumerate() {
            if r.points.len() < 2 || !(r.width > 0.0) {
                return Err(Error::Scene(format!("road {i} needs two points and a positive width")));
            }
            if r.points.iter().any(|p| !in_extent(e, *p)) {
                return Err(Error::Scene(format!("road {i} outside extent")));
            }
        }
        for (i, m) in self.markings.iter().enumerate() {
            if !in_extent(e, m.center) {
                return Err(Error::Scene(format!("marking {i} outside extent")));
            }
        }
        for (i, b) in self.obstacles.iter().enumerate() {
            if !in_extent(e, b.center) || !(b.height > 0.0) {
                return Err(Error::Scene(format!("obstacle {i} outside extent or without height")));
            }
        }
        for (i, d) in self.dynamic.iter().enumerate() {
            let end = [
                d.start[0] + d.velocity[0] * (d.t_end - d.t_start),
                d.start[1] + d.velocity[1] * (d.t_end - d.t_start),
            ];
            if !in_extent(e, d.start) || !in_extent(e, end) || d.t_end < d.t_start {
                return Err(Error::Scene(format!("dynamic object {i} leaves the extent")));
            }
        }
        Ok(())
    }
}

pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut segments = Vec::new();
    for (ri, r) in spec.roads.iter().enumerate() {
        let mut pts = r.points.clone();
        if r.closed {
            pts.push(pts[0]);
        }
        let mut s = 0.0;
        for w in pts.windows(2) {
            segments.push(Segment { a: w[0], b: w[1], s0: s, road: ri });
            s += (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
        }
    }
    let mut seg_index = Buckets::new(spec.extent, BUCKET);
    for (i, sg) in segments.iter().enumerate() {
        let half = spec.roads[sg.road].width / 2.0;
        seg_index.insert(
            i as u32,
            [sg.a[0].min(sg.b[0]) - half, sg.a[1].min(sg.b[1]) - half],
            [sg.a[0].max(sg.b[0]) + half, sg.a[1].max(sg.b[1]) + half],
        );
    }

    // scatter pictograms inside each lane
    let mut markings = spec.markings.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5ca1_ab1e);
    for sg in &segments {
        let road = &spec.roads[sg.road];
        let len = (sg.b[0] - sg.a[0]).hypot(sg.b[1] - sg.a[1]);
        if len == 0.0 || road.markings_per_100m <= 0.0 {
            continue;
        }
        let dir = [(sg.b[0] - sg.a[0]) / len, (sg.b[1] - sg.a[1]) / len];
        let n = [-dir[1], dir[0]];
        let expected = road.markings_per_100m * len / 100.0;
        let count = expected.floor() as usize + usize::from(rng.gen::<f64>() < expected.fract());
        let lane = (road.width / 2.0 - EDGE_LINE_INSET - 0.3).max(0.0);
        for _ in 0..count {
            let t = rng.gen_range(0.0..len);
            let side = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let off = side * rng.gen_range(0.25 * lane..0.75 * lane.max(1e-3));
            let center = [
                sg.a[0] + dir[0] * t + n[0] * off,
                sg.a[1] + dir[1] * t + n[1] * off,
            ];
            let shape = match rng.gen_range(0..3) {
                0 => MarkingShape::Disc,
                1 => MarkingShape::Rect,
                _ => MarkingShape::Arrow,
            };
            let a = rng.gen_range(0.4..1.2);
            let b = rng.gen_range(0.3..0.8);
            let yaw = dir[1].atan2(dir[0]) + if rng.gen::<bool>() { 0.0 } else { std::f64::consts::PI };
            let intensity = rng.gen_range(0.6..1.0) * spec.marking_intensity;
            let m = Marking { center, size: [a, b], yaw, shape, intensity };
            if in_extent(&spec.extent, center) {
                markings.push(m);
            }
        }
    }
    let mut mark_index = Buckets::new(spec.extent, BUCKET);
    for (i, m) in markings.iter().enumerate() {
        let r = m.radius();
        mark_index.insert(i as u32, [m.center[0] - r, m.center[1] - r], [m.center[0] + r, m.center[1] + r]);
    }
    Ok(Scene { spec: spec.clone(), markings, segments, seg_index, mark_index })
}

/// Ray hit against the scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub range: f64,
    pub point: [f64; 3],
    pub ground: bool,
    pub reflectivity: f64,
}

/// Reflectivity of box surfaces.
const BOX_REFLECTIVITY: f64 = 0.5;

impl Scene {
    pub fn extent(&self) -> [f64; 4] {
        self.spec.extent
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        in_extent(&self.spec.extent, [x, y])
    }

    pub fn height(&self, x: f64, y: f64) -> f64 {
        self.spec
            .patches
            .iter()
            .find(|p| p.contains(x, y))
            .map_or(0.0, |p| p.z(x, y))
    }

    /// Distance to the nearest road centreline, with its signed lateral
    /// offset and arc length, if within that road's half width.
    fn road_at(&self, x: f64, y: f64) -> Option<(f64, f64, usize)> {
        let mut best: Option<(f64, f64, f64, usize)> = None;
        for &id in self.seg_index.get(x, y) {
            let sg = &self.segments[id as usize];
            let (dx, dy) = (sg.b[0] - sg.a[0], sg.b[1] - sg.a[1]);
            let len2 = dx * dx + dy * dy;
            let t = if len2 > 0.0 {
                (((x - sg.a[0]) * dx + (y - sg.a[1]) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (px, py) = (sg.a[0] + t * dx, sg.a[1] + t * dy);
            let d = (x - px).hypot(y - py);
            if d > self.spec.roads[sg.road].width / 2.0 {
                continue;
            }
            if best.is_none_or(|b| d < b.0) {
                let cross = dx * (y - sg.a[1]) - dy * (x - sg.a[0]);
                let signed = if cross >= 0.0 { d } else { -d };
                best = Some((d, signed, sg.s0 + t * len2.sqrt(), sg.road));
            }
        }
        best.map(|b| (b.1, b.2, b.3))
    }

    /// Ground reflectivity in [0, 1].
    pub fn intensity(&self, x: f64, y: f64) -> f64 {
        for &id in self.mark_index.get(x, y) {
            let m = &self.markings[id as usize];
            if m.contains(x, y) {
                return m.intensity.clamp(0.0, 1.0);
            }
        }
        let spec = &self.spec;
        let tex = |base: f64| {
            let coarse = value_noise(x, y, spec.texture_scale, spec.seed);
            let fine = value_noise(x, y, spec.texture_scale / 3.0, spec.seed ^ 0xf1e);
            (base + spec.texture_amplitude * (0.65 * coarse + 0.35 * fine - 0.5)).clamp(0.0, 1.0)
        };
        match self.road_at(x, y) {
            Some((lat, s, ri)) => {
                let road = &spec.roads[ri];
                let edge = road.width / 2.0 - EDGE_LINE_INSET;
                if road.edge_lines && (lat.abs() - edge).abs() <= EDGE_LINE_WIDTH / 2.0 {
                    return spec.marking_intensity;
                }
                if let Some([on, off]) = road.center_dash {
                    if lat.abs() <= EDGE_LINE_WIDTH / 2.0 && s.rem_euclid(on + off) < on {
                        return spec.marking_intensity;
                    }
                }
                tex(spec.road_intensity)
            }
            None => tex(spec.base_intensity),
        }
    }

    /// Boxes present at time `t`.
    pub fn boxes_at(&self, t: f64) -> Vec<BoxObstacle> {
        let mut v = self.spec.obstacles.clone();
        v.extend(self.spec.dynamic.iter().filter_map(|d| d.at(t)));
        v
    }

    /// Top height of an occupying box at `(x, y, t)`.
    pub fn occupancy(&self, x: f64, y: f64, t: f64) -> Option<f64> {
        self.boxes_at(t).iter().find_map(|b| {
            let (dx, dy) = (x - b.center[0], y - b.center[1]);
            let (s, c) = b.yaw.sin_cos();
            let (lx, ly) = (c * dx + s * dy, -s * dx + c * dy);
            (lx.abs() <= b.half[0] && ly.abs() <= b.half[1])
                .then(|| self.height(b.center[0], b.center[1]) + b.height)
        })
    }

    /// First hit along `origin + t * dir` (unit `dir`) within `max_range`.
    pub fn cast(&self, origin: [f64; 3], dir: [f64; 3], max_range: f64, boxes: &[BoxObstacle]) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        let mut consider = |range: f64, ground: bool| {
            if range > 1e-6 && range <= max_range && best.is_none_or(|b| range < b.range) {
                let p = [origin[0] + dir[0] * range, origin[1] + dir[1] * range, origin[2] + dir[2] * range];
                best = Some(Hit { range, point: p, ground, reflectivity: 0.0 });
            }
        };
        // base plane z = 0 outside all patches, then each patch plane
        if dir[2] < 0.0 {
            let t = -origin[2] / dir[2];
            let (x, y) = (origin[0] + dir[0] * t, origin[1] + dir[1] * t);
            if !self.spec.patches.iter().any(|p| p.contains(x, y)) {
                consider(t, true);
            }
        }
        for p in &self.spec.patches {
            let denom = dir[2] - p.gradient[0] * dir[0] - p.gradient[1] * dir[1];
            if denom.abs() < 1e-12 {
                continue;
            }
            let t = (p.z(origin[0], origin[1]) - origin[2]) / denom;
            let (x, y) = (origin[0] + dir[0] * t, origin[1] + dir[1] * t);
            if t > 0.0 && p.contains(x, y) {
                consider(t, true);
            }
        }
        for b in boxes {
            let r = b.half[0].hypot(b.half[1]);
            let (cx, cy) = (b.center[0] - origin[0], b.center[1] - origin[1]);
            if cx.hypot(cy) > max_range + r {
                continue;
            }
            let base = self.height(b.center[0], b.center[1]);
            if let Some(t) = ray_box(origin, dir, b, base) {
                consider(t, false);
            }
        }
        best.map(|mut h| {
            h.reflectivity = if h.ground { self.intensity(h.point[0], h.point[1]) } else { BOX_REFLECTIVITY };
            h
        })
    }

    /// Deterministic digest of the generated content.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        let e = self.spec.extent;
        for j in 0..64 {
            for i in 0..64 {
                let x = e[0] + (e[2] - e[0]) * (i as f64 + 0.37) / 64.0;
                let y = e[1] + (e[3] - e[1]) * (j as f64 + 0.61) / 64.0;
                self.intensity(x, y).to_bits().hash(&mut h);
                self.height(x, y).to_bits().hash(&mut h);
            }
        }
        for m in &self.markings {
            m.center[0].to_bits().hash(&mut h);
            m.center[1].to_bits().hash(&mut h);
            m.intensity.to_bits().hash(&mut h);
        }
        h.finish()
    }
}

/// Entry distance of a ray into a yaw-rotated box on `[base, base + height]`.
fn ray_box(o: [f64; 3], d: [f64; 3], b: &BoxObstacle, base: f64) -> Option<f64> {
    let (s, c) = b.yaw.sin_cos();
    let (ox, oy) = (o[0] - b.center[0], o[1] - b.center[1]);
    let lo = [c * ox + s * oy, -s * ox + c * oy, o[2] - base - b.height / 2.0];
    let ld = [c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2]];
    let half = [b.half[0], b.half[1], b.height / 2.0];
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for k in 0..3 {
        if ld[k].abs() < 1e-12 {
            if lo[k].abs() > half[k] {
                return None;
            }
            continue;
        }
        let a = (-half[k] - lo[k]) / ld[k];
        let bb = (half[k] - lo[k]) / ld[k];
        t0 = t0.max(a.min(bb));
        t1 = t1.min(a.max(bb));
    }
    (t1 >= t0.max(0.0)).then_some(t0.max(0.0))
}
