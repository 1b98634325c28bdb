//! Sensor-centred, world-aligned grid of per-cell ground statistics.
//!
//! Every incoming sweep is binned into square cells whose positions are fixed
//! in the world frame; the grid only scrolls by whole cells as the sensor
//! moves. Within one sweep each touched cell gets a robust height (median of
//! its lowest `v_np` returns) and a z-spread. A cell is a ground candidate
//! when its spread is at most `h_g` and its height lies within `o_minc` of the
//! local ground level, taken as the lower quartile of cell heights in a 9x9
//! window. Points within `h_o` of the cell's reference height are ground.
//!
//! Statistics accumulate across sweeps for as long as a cell stays inside
//! the grid: z mean/variance over all points, and intensity plus ground
//! height averaged over ground points only (weighted by their count).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{PointCloud, Pose3D};

/// Half-width (in cells) of the window used for the local ground level.
const LOCAL_WINDOW: i64 = 4;
const LOCAL_QUANTILE: f64 = 0.25;

/// Welford / Chan running mean and population variance.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningStats {
    pub count: f64,
    pub mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1.0;
        let d = x - self.mean;
        self.mean += d / self.count;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &RunningStats) {
        if other.count == 0.0 {
            return;
        }
        if self.count == 0.0 {
            *self = *other;
            return;
        }
        let n = self.count + other.count;
        let d = other.mean - self.mean;
        self.mean += d * other.count / n;
        self.m2 += other.m2 + d * d * self.count * other.count / n;
        self.count = n;
    }

    pub fn variance(&self) -> f64 {
        if self.count > 0.0 {
            (self.m2 / self.count).max(0.0)
        } else {
            0.0
        }
    }
}

/// Ground segmenter parameters. Key names follow the per-sensor parameter
/// table used for the reference ground segmenter; only `h_g`, `h_o`,
/// `o_minc` and `v_np` drive this implementation, the rest are accepted so
/// existing parameter files load unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmenterConfig {
    /// Unused.
    pub d_sf: f64,
    /// Unused.
    pub t_minv: f64,
    /// Unused (degrees).
    pub theta: f64,
    /// Unused.
    pub g_minp: f64,
    /// Maximum distance (m) between a cell's height and the local ground level.
    pub o_minc: f64,
    /// Maximum z-spread (m) of a ground candidate cell.
    pub h_g: f64,
    /// Tolerance (m) around the reference height for a ground point.
    pub h_o: f64,
    /// Unused legacy key.
    pub s: f64,
    /// Unused.
    pub o_t: f64,
    /// Unused.
    pub d_ps: f64,
    /// Unused.
    pub d_pv: f64,
    /// Points used for the robust cell height; also scales the confidence.
    pub v_np: u32,
    /// Grid side length in cells.
    pub grid_size: usize,
    /// Cell edge length in metres.
    pub cell_size: f64,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self::for_sensor("hdl64e").expect("built-in profile")
    }
}

impl SegmenterConfig {
    pub const SENSORS: [&'static str; 5] = ["hdl64e", "os1_64", "os2_128", "aeva", "avia"];

    /// Built-in per-sensor parameter sets.
    pub fn for_sensor(name: &str) -> Option<Self> {
        #[rustfmt::skip]
        let v: [f64; 12] = match name {
            "hdl64e"  => [0.00010, 0.0005, 5.0, 0.250, 1.25, 0.30, 0.10, 20.0, 0.1, 20.0, 0.2, 10.0],
            "os1_64"  => [0.00015, 0.0001, 5.0, 0.125, 1.25, 0.35, 0.15, 10.0, 0.1, 15.0, 0.1, 10.0],
            "os2_128" => [0.00010, 0.0005, 5.0, 0.250, 1.25, 0.30, 0.10, 20.0, 0.1, 30.0, 0.2, 10.0],
            "aeva"    => [0.00010, 0.0005, 5.0, 0.250, 1.25, 0.30, 0.10, 20.0, 0.1, 20.0, 0.2, 10.0],
            "avia"    => [0.00100, 0.0005, 10.0, 0.125, 0.50, 0.30, 0.10, 40.0, 0.1, 7.5, 0.2, 10.0],
            _ => return None,
        };
        Some(Self {
            d_sf: v[0],
            t_minv: v[1],
            theta: v[2],
            g_minp: v[3],
            o_minc: v[4],
            h_g: v[5],
            h_o: v[6],
            s: v[7],
            o_t: v[8],
            d_ps: v[9],
            d_pv: v[10],
            v_np: v[11] as u32,
            grid_size: 301,
            cell_size: 0.33,
        })
    }

    pub const IGNORED_KEYS: [&'static str; 8] =
        ["d_sf", "t_minv", "theta", "g_minp", "s", "o_t", "d_ps", "d_pv"];

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("o_minc", self.o_minc),
            ("h_g", self.h_g),
            ("h_o", self.h_o),
            ("cell_size", self.cell_size),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("segmenter.{k} must be positive")));
            }
        }
        if self.v_np == 0 || self.grid_size == 0 {
            return Err(Error::Config(
                "segmenter.v_np and segmenter.grid_size must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn warn_ignored(&self) {
        log::warn!(
            "segmenter keys {:?} are accepted but not used by this ground segmenter",
            Self::IGNORED_KEYS
        );
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct CellState {
    z: RunningStats,
    ground_z: RunningStats,
    intensity_mean: f64,
}

/// Read-only copy of one cell.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GridCell {
    /// Mean intensity of ground points (0 when `intensity_weight` is 0).
    pub intensity_mean: f32,
    /// Number of ground points accumulated.
    pub intensity_weight: f32,
    /// Mean z of ground points (m).
    pub ground_height: f32,
    /// Population variance of z over all points (m^2).
    pub height_variance: f32,
    pub point_count: u32,
    pub ground_confidence: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointLabel {
    Ground,
    NonGround,
    OutOfGrid,
}

/// Immutable copy of the whole grid, used for rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSnapshot {
    pub size: usize,
    pub cell_size: f64,
    /// World cell index of cell (0, 0).
    pub origin: [i64; 2],
    pub cells: Vec<GridCell>,
}

impl GridSnapshot {
    pub fn cell(&self, u: usize, v: usize) -> &GridCell {
        &self.cells[v * self.size + u]
    }
}

#[derive(Debug, Clone)]
pub struct GroundGridMap {
    config: SegmenterConfig,
    size: usize,
    cell_size: f64,
    origin: [i64; 2],
    cells: Vec<CellState>,
}

/// World cell index containing coordinate `x`.
pub fn world_cell(x: f64, cell_size: f64) -> i64 {
    (x / cell_size).floor() as i64
}

impl GroundGridMap {
    /// Empty grid centred on the cell containing `center`.
    pub fn new(config: SegmenterConfig, center: [f64; 2]) -> Self {
        let size = config.grid_size;
        let cell_size = config.cell_size;
        let half = (size / 2) as i64;
        let origin = [
            world_cell(center[0], cell_size) - half,
            world_cell(center[1], cell_size) - half,
        ];
        Self {
            config,
            size,
            cell_size,
            origin,
            cells: vec![CellState::default(); size * size],
        }
    }

    pub fn config(&self) -> &SegmenterConfig {
        &self.config
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn origin(&self) -> [i64; 2] {
        self.origin
    }

    /// World position of the corner of cell (0, 0).
    pub fn origin_world(&self) -> [f64; 2] {
        [
            self.origin[0] as f64 * self.cell_size,
            self.origin[1] as f64 * self.cell_size,
        ]
    }

    pub fn center_cell(&self) -> [usize; 2] {
        [self.size / 2, self.size / 2]
    }

    /// Scrolls the grid so the sensor sits in the centre cell. Cells keep
    /// their world position; cells entering the grid start empty.
    pub fn recenter(&mut self, sensor_xy: [f64; 2]) {
        let half = (self.size / 2) as i64;
        let new_origin = [
            world_cell(sensor_xy[0], self.cell_size) - half,
            world_cell(sensor_xy[1], self.cell_size) - half,
        ];
        if new_origin == self.origin {
            return;
        }
        let dx = new_origin[0] - self.origin[0];
        let dy = new_origin[1] - self.origin[1];
        let n = self.size as i64;
        let mut cells = vec![CellState::default(); self.size * self.size];
        if dx.abs() < n && dy.abs() < n {
            for v in 0..n {
                let ov = v + dy;
                if !(0..n).contains(&ov) {
                    continue;
                }
                for u in 0..n {
                    let ou = u + dx;
                    if (0..n).contains(&ou) {
                        cells[(v * n + u) as usize] = self.cells[(ov * n + ou) as usize];
                    }
                }
            }
        }
        self.cells = cells;
        self.origin = new_origin;
    }

    fn local_index(&self, wx: f64, wy: f64) -> Option<usize> {
        let u = world_cell(wx, self.cell_size) - self.origin[0];
        let v = world_cell(wy, self.cell_size) - self.origin[1];
        let n = self.size as i64;
        ((0..n).contains(&u) && (0..n).contains(&v)).then(|| (v * n + u) as usize)
    }

    /// Segments `cloud` (sensor frame, placed in the world by `sensor_pose`)
    /// and folds it into the grid. Returns one label per input point.
    pub fn integrate_scan(&mut self, cloud: &PointCloud, sensor_pose: &Pose3D) -> Vec<PointLabel> {
        let cfg = &self.config;
        let n_points = cloud.points.len();
        let mut labels = vec![PointLabel::OutOfGrid; n_points];

        // world z and cell per point
        let mut binned: Vec<(usize, u32)> = Vec::with_capacity(n_points);
        let mut world_z = vec![0.0f64; n_points];
        for (i, p) in cloud.points.iter().enumerate() {
            let w = sensor_pose.transform_point(nalgebra::Vector3::new(
                p.x as f64, p.y as f64, p.z as f64,
            ));
            world_z[i] = w.z;
            if let Some(cell) = self.local_index(w.x, w.y) {
                binned.push((cell, i as u32));
            }
        }
        if binned.is_empty() {
            return labels;
        }
        // Group by cell, ties by z so per-cell order is independent of input order.
        binned.sort_unstable_by(|a, b| {
            a.0.cmp(&b.0)
                .then(world_z[a.1 as usize].total_cmp(&world_z[b.1 as usize]))
                .then(a.1.cmp(&b.1))
        });

        struct Touched {
            cell: usize,
            start: usize,
            end: usize,
            height: f64,
            spread: f64,
        }
        let v_np = cfg.v_np as usize;
        let mut touched: Vec<Touched> = Vec::new();
        let mut start = 0;
        while start < binned.len() {
            let cell = binned[start].0;
            let mut end = start;
            while end < binned.len() && binned[end].0 == cell {
                end += 1;
            }
            let zs = |k: usize| world_z[binned[k].1 as usize];
            let k = (end - start).min(v_np);
            // median of the lowest k values (already sorted ascending)
            let height = if k % 2 == 1 {
                zs(start + k / 2)
            } else {
                0.5 * (zs(start + k / 2 - 1) + zs(start + k / 2))
            };
            touched.push(Touched {
                cell,
                start,
                end,
                height,
                spread: zs(end - 1) - zs(start),
            });
            start = end;
        }

        // local ground level: lower quartile of cell heights in a window
        let n = self.size as i64;
        let mut frame_height = vec![f64::NAN; self.size * self.size];
        for t in &touched {
            frame_height[t.cell] = t.height;
        }
        let mut window = Vec::with_capacity(((2 * LOCAL_WINDOW + 1) * (2 * LOCAL_WINDOW + 1)) as usize);
        for t in &touched {
            let (u, v) = ((t.cell as i64) % n, (t.cell as i64) / n);
            window.clear();
            for dv in -LOCAL_WINDOW..=LOCAL_WINDOW {
                let vv = v + dv;
                if !(0..n).contains(&vv) {
                    continue;
                }
                for du in -LOCAL_WINDOW..=LOCAL_WINDOW {
                    let uu = u + du;
                    if !(0..n).contains(&uu) {
                        continue;
                    }
                    let h = frame_height[(vv * n + uu) as usize];
                    if !h.is_nan() {
                        window.push(h);
                    }
                }
            }
            let q = ((window.len() - 1) as f64 * LOCAL_QUANTILE).round() as usize;
            let (_, local, _) = window.select_nth_unstable_by(q, f64::total_cmp);
            let local = *local;
            let lowest = world_z[binned[t.start].1 as usize];

            let candidate = t.spread <= cfg.h_g && (t.height - local).abs() <= cfg.o_minc;
            let reference = if candidate {
                Some(t.height)
            } else if (lowest - local).abs() <= cfg.h_o {
                Some(local)
            } else {
                None
            };

            let mut all = RunningStats::default();
            let mut ground = RunningStats::default();
            let mut intensity_sum = 0.0;
            for &(_, idx) in &binned[t.start..t.end] {
                let z = world_z[idx as usize];
                all.push(z);
                let is_ground = reference.is_some_and(|r| (z - r).abs() <= cfg.h_o);
                labels[idx as usize] = if is_ground {
                    ground.push(z);
                    intensity_sum += cloud.points[idx as usize].intensity as f64;
                    PointLabel::Ground
                } else {
                    PointLabel::NonGround
                };
            }

            let state = &mut self.cells[t.cell];
            state.z.merge(&all);
            if ground.count > 0.0 {
                let w_old = state.ground_z.count;
                let w_new = w_old + ground.count;
                state.intensity_mean = (state.intensity_mean * w_old + intensity_sum) / w_new;
                state.ground_z.merge(&ground);
            }
        }
        labels
    }

    fn snapshot_cell(&self, s: &CellState) -> GridCell {
        let ground_count = s.ground_z.count;
        let confidence = if ground_count > 0.0 {
            let support = (ground_count / (2.0 * self.config.v_np as f64)).clamp(0.0, 1.0);
            let consistency =
                (1.0 - s.ground_z.variance().sqrt() / self.config.h_o).clamp(0.0, 1.0);
            support * consistency
        } else {
            0.0
        };
        GridCell {
            intensity_mean: s.intensity_mean as f32,
            intensity_weight: ground_count as f32,
            ground_height: if ground_count > 0.0 {
                s.ground_z.mean as f32
            } else {
                0.0
            },
            height_variance: s.z.variance() as f32,
            point_count: s.z.count as u32,
            ground_confidence: confidence as f32,
        }
    }

    pub fn cell_stats(&self, u: usize, v: usize) -> Result<GridCell> {
        if u >= self.size || v >= self.size {
            return Err(Error::CellIndex {
                u,
                v,
                size: self.size,
            });
        }
        Ok(self.snapshot_cell(&self.cells[v * self.size + u]))
    }

    pub fn snapshot(&self) -> GridSnapshot {
        GridSnapshot {
            size: self.size,
            cell_size: self.cell_size,
            origin: self.origin,
            cells: self.cells.iter().map(|c| self.snapshot_cell(c)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> SegmenterConfig {
        SegmenterConfig {
            grid_size: 61,
            ..SegmenterConfig::default()
        }
    }

    /// Dense plane z=0 sampled at `per_axis`^2 points per cell over +-8 m.
    fn plane_cloud(per_axis: usize, intensity: f32, sensor_z: f32) -> PointCloud {
        let cs = 0.33f32;
        let mut pts = Vec::new();
        for cv in -24..24 {
            for cu in -24..24 {
                for j in 0..per_axis {
                    for i in 0..per_axis {
                        let x = (cu as f32 + (i as f32 + 0.5) / per_axis as f32) * cs;
                        let y = (cv as f32 + (j as f32 + 0.5) / per_axis as f32) * cs;
                        pts.push(Point::new(x, y, -sensor_z, intensity));
                    }
                }
            }
        }
        PointCloud::new(pts, 0.0, "test").unwrap()
    }

    fn sensor_pose(z: f64) -> Pose3D {
        Pose3D::new(nalgebra::Vector3::new(0.0, 0.0, z), Default::default())
    }

    #[test]
    fn flat_plane_all_ground() {
        let mut grid = GroundGridMap::new(small_config(), [0.0, 0.0]);
        let cloud = plane_cloud(4, 10.0, 1.8);
        let labels = grid.integrate_scan(&cloud, &sensor_pose(1.8));
        assert!(labels.iter().all(|l| *l == PointLabel::Ground));
        let snap = grid.snapshot();
        let touched: Vec<_> = snap.cells.iter().filter(|c| c.point_count > 0).collect();
        assert!(!touched.is_empty());
        for c in touched {
            assert!(c.ground_height.abs() < 0.02);
            assert!((c.intensity_mean - 10.0).abs() < 1e-4);
            assert!(c.ground_confidence > 0.5);
        }
    }

    #[test]
    fn box_points_are_non_ground() {
        let mut grid = GroundGridMap::new(small_config(), [0.0, 0.0]);
        let mut cloud = plane_cloud(4, 10.0, 0.0);
        // 2 m tall column of bright points above the cell [1.0, 1.33) x [1.0, 1.33)
        let cell_x = 3.0 * 0.33 + 0.1;
        let first_box = cloud.points.len();
        for k in 1..=20 {
            cloud
                .points
                .push(Point::new(cell_x, cell_x, (k + 1) as f32 * 0.1, 99.0));
        }
        let labels = grid.integrate_scan(&cloud, &sensor_pose(0.0));
        for (i, l) in labels.iter().enumerate() {
            if i >= first_box {
                assert_eq!(*l, PointLabel::NonGround, "box point {i}");
            } else {
                assert_eq!(*l, PointLabel::Ground, "plane point {i}");
            }
        }
        let u = (world_cell(cell_x as f64, 0.33) - grid.origin()[0]) as usize;
        let v = (world_cell(cell_x as f64, 0.33) - grid.origin()[1]) as usize;
        let c = grid.cell_stats(u, v).unwrap();
        assert!((c.intensity_mean - 10.0).abs() < 1e-4);
        assert_eq!(c.intensity_weight, 16.0);
        assert_eq!(c.point_count, 36);
        assert!(c.height_variance > 0.1);
    }

    #[test]
    fn untouched_cells_are_empty() {
        let mut grid = GroundGridMap::new(small_config(), [0.0, 0.0]);
        grid.integrate_scan(&plane_cloud(2, 5.0, 0.0), &sensor_pose(0.0));
        let c = grid.cell_stats(0, 0).unwrap();
        assert_eq!(c.intensity_weight, 0.0);
        assert_eq!(c.ground_confidence, 0.0);
        assert_eq!(c.point_count, 0);
    }

    #[test]
    fn single_point_cell() {
        let mut grid = GroundGridMap::new(small_config(), [0.0, 0.0]);
        let cloud = PointCloud::new(vec![Point::new(0.1, 0.1, 1.0, 5.0)], 0.0, "t").unwrap();
        let labels = grid.integrate_scan(&cloud, &sensor_pose(0.0));
        let [cu, cv] = grid.center_cell();
        let c = grid.cell_stats(cu, cv).unwrap();
        assert_eq!(c.point_count, 1);
        assert_eq!(c.height_variance, 0.0);
        // an isolated return is its own local ground level
        assert_eq!(labels[0], PointLabel::Ground);
        assert_eq!(c.intensity_mean, 5.0);
    }

    #[test]
    fn cell_index_bounds() {
        let grid = GroundGridMap::new(small_config(), [0.0, 0.0]);
        assert!(matches!(
            grid.cell_stats(61, 0),
            Err(Error::CellIndex { .. })
        ));
    }

    #[test]
    fn out_of_grid_points() {
        let mut grid = GroundGridMap::new(small_config(), [0.0, 0.0]);
        let cloud = PointCloud::new(
            vec![Point::new(100.0, 0.0, 0.0, 1.0), Point::new(0.0, 0.0, 0.0, 1.0)],
            0.0,
            "t",
        )
        .unwrap();
        let labels = grid.integrate_scan(&cloud, &sensor_pose(0.0));
        assert_eq!(labels[0], PointLabel::OutOfGrid);
        assert_ne!(labels[1], PointLabel::OutOfGrid);
    }

    fn filled_grid(seed: u64) -> GroundGridMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut grid = GroundGridMap::new(small_config(), [0.0, 0.0]);
        let pts = (0..3000)
            .map(|_| {
                Point::new(
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(-0.05..0.05),
                    rng.gen_range(0.0..1.0),
                )
            })
            .collect();
        grid.integrate_scan(&PointCloud::new(pts, 0.0, "t").unwrap(), &sensor_pose(0.0));
        grid
    }

    #[test]
    fn recenter_sub_cell_is_noop() {
        let mut grid = filled_grid(1);
        let before = grid.snapshot();
        grid.recenter([0.1, 0.0]);
        assert_eq!(grid.snapshot(), before);
    }

    #[test]
    fn recenter_two_cells_east() {
        let mut grid = filled_grid(2);
        let before = grid.snapshot();
        grid.recenter([2.0 * 0.33 + 0.01, 0.0]);
        let after = grid.snapshot();
        assert_eq!(after.origin[0], before.origin[0] + 2);
        let n = 61;
        for v in 0..n {
            for u in 0..n {
                if u + 2 < n {
                    assert_eq!(after.cell(u, v), before.cell(u + 2, v));
                } else {
                    assert_eq!(*after.cell(u, v), GridCell::default());
                }
            }
        }
    }

    #[test]
    fn recenter_full_width_clears() {
        let mut grid = filled_grid(3);
        grid.recenter([61.0 * 0.33, 0.0]);
        assert!(grid.snapshot().cells.iter().all(|c| *c == GridCell::default()));
    }

    #[test]
    fn labels_are_order_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut pts: Vec<Point> = (0..2000)
            .map(|_| {
                let x: f32 = rng.gen_range(-5.0..5.0);
                let y: f32 = rng.gen_range(-5.0..5.0);
                let z = if rng.gen_bool(0.1) { rng.gen_range(0.0..2.0) } else { rng.gen_range(-0.03..0.03) };
                Point::new(x, y, z, 1.0)
            })
            .collect();
        let mut a = GroundGridMap::new(small_config(), [0.0, 0.0]);
        let la = a.integrate_scan(&PointCloud::new(pts.clone(), 0.0, "t").unwrap(), &sensor_pose(0.0));
        let perm: Vec<usize> = {
            let mut p: Vec<usize> = (0..pts.len()).collect();
            p.reverse();
            p.swap(3, 700);
            p
        };
        let shuffled: Vec<Point> = perm.iter().map(|&i| pts[i]).collect();
        pts = shuffled;
        let mut b = GroundGridMap::new(small_config(), [0.0, 0.0]);
        let lb = b.integrate_scan(&PointCloud::new(pts, 0.0, "t").unwrap(), &sensor_pose(0.0));
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(lb[k], la[i]);
        }
        assert!(la.contains(&PointLabel::NonGround));
    }

    proptest! {
        #[test]
        fn running_variance_matches_two_pass(xs in prop::collection::vec(-1e3..1e3f64, 2..300), split in 0usize..300) {
            let mut s = RunningStats::default();
            let split = split.min(xs.len());
            let mut other = RunningStats::default();
            for &x in &xs[..split] { s.push(x); }
            for &x in &xs[split..] { other.push(x); }
            s.merge(&other);
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
            prop_assert!((s.variance() - var).abs() <= 1e-6 * var.max(1e-12));
        }

        #[test]
        fn recenter_inverse_restores(dx in -20i32..20, dy in -20i32..20) {
            let mut grid = filled_grid(5);
            let before = grid.snapshot();
            grid.recenter([dx as f64 * 0.33 + 0.1, dy as f64 * 0.33 + 0.1]);
            grid.recenter([0.1, 0.1]);
            let after = grid.snapshot();
            let n = 61usize;
            for v in 0..n {
                for u in 0..n {
                    let survived = (u as i32 - dx) >= 0 && ((u as i32 - dx) as usize) < n
                        && (v as i32 - dy) >= 0 && ((v as i32 - dy) as usize) < n;
                    if survived {
                        prop_assert_eq!(after.cell(u, v), before.cell(u, v));
                    }
                }
            }
        }

        #[test]
        fn labels_partition_and_noiseless_plane(per_axis in 4usize..6) {
            let mut grid = GroundGridMap::new(small_config(), [0.0, 0.0]);
            let cloud = plane_cloud(per_axis, 3.0, 0.0);
            let labels = grid.integrate_scan(&cloud, &sensor_pose(0.0));
            prop_assert_eq!(labels.len(), cloud.len());
            prop_assert!(labels.iter().all(|l| *l == PointLabel::Ground));
        }
    }
}
