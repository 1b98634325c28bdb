//! Deterministic synthetic worlds: textured ground with roads and
//! obstacles, simulated LiDAR sweeps and drifting odometry.

mod drive;
mod scene;
mod sensor;

use std::f64::consts::PI;

use nalgebra::{UnitQuaternion, Vector3};

pub use drive::{drift_odometry, simulate_drive, DriftModel, Drive};
pub use scene::{
    generate_scene, BoxObstacle, DynamicBox, GroundPatch, Hit, Marking, MarkingShape, Road, Scene, SceneSpec,
};
pub use sensor::{simulate_scan, ScanPattern, SensorModel};

use crate::bev::{BevImage, NormalizationFactors, SLOPE_DISPLAY_SCALE};
use crate::error::Result;
use crate::geom::{Pose3D, Trajectory};

/// Sensor height above ground.
pub const MOUNT_HEIGHT: f64 = 1.8;

/// Closed rounded-rectangle polyline (counter-clockwise), sampled about
/// every `step` metres.
pub fn rounded_rectangle(center: [f64; 2], size: [f64; 2], radius: f64, step: f64) -> Vec<[f64; 2]> {
    let (hx, hy) = (size[0] / 2.0 - radius, size[1] / 2.0 - radius);
    let corners = [[hx, -hy], [hx, hy], [-hx, hy], [-hx, -hy]];
    let mut pts = Vec::new();
    for (k, c) in corners.iter().enumerate() {
        let a0 = -PI / 2.0 + k as f64 * PI / 2.0;
        let n = ((radius * PI / 2.0) / step).ceil().max(1.0) as usize;
        for i in 0..=n {
            let a = a0 + PI / 2.0 * i as f64 / n as f64;
            pts.push([center[0] + c[0] + radius * a.cos(), center[1] + c[1] + radius * a.sin()]);
        }
        // straight to the next corner
        let next = corners[(k + 1) % 4];
        let a1 = a0 + PI / 2.0;
        let from = [c[0] + radius * a1.cos(), c[1] + radius * a1.sin()];
        let to = [next[0] + radius * a1.cos(), next[1] + radius * a1.sin()];
        let len = (to[0] - from[0]).hypot(to[1] - from[1]);
        let m = (len / step).ceil() as usize;
        for i in 1..m {
            let f = i as f64 / m as f64;
            pts.push([
                center[0] + from[0] + f * (to[0] - from[0]),
                center[1] + from[1] + f * (to[1] - from[1]),
            ]);
        }
    }
    pts
}

pub fn polyline_length(pts: &[[f64; 2]], closed: bool) -> f64 {
    let mut l: f64 = pts.windows(2).map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1])).sum();
    if closed && pts.len() > 1 {
        let (a, b) = (pts[pts.len() - 1], pts[0]);
        l += (b[0] - a[0]).hypot(b[1] - a[1]);
    }
    l
}

/// Poses every `spacing` metres along a polyline, heading along the
/// tangent, at `MOUNT_HEIGHT` above the scene surface. Stamps follow a
/// constant `speed`. `length` limits the driven distance.
pub fn sample_path(scene: &Scene, pts: &[[f64; 2]], closed: bool, spacing: f64, speed: f64, length: f64) -> Result<Trajectory> {
    let mut pts = pts.to_vec();
    if closed {
        pts.push(pts[0]);
    }
    let total = polyline_length(&pts, false).min(length);
    let n = (total / spacing).floor() as usize + 1;
    let mut cum = vec![0.0];
    for w in pts.windows(2) {
        cum.push(cum.last().unwrap() + (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]));
    }
    let at = |s: f64| -> ([f64; 2], f64) {
        let k = cum.partition_point(|&c| c <= s).clamp(1, pts.len() - 1);
        let (a, b) = (pts[k - 1], pts[k]);
        let seg = cum[k] - cum[k - 1];
        let f = if seg > 0.0 { (s - cum[k - 1]) / seg } else { 0.0 };
        ([a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])], (b[1] - a[1]).atan2(b[0] - a[0]))
    };
    let mut traj = Trajectory::new();
    for i in 0..n {
        let s = i as f64 * spacing;
        let (p, _) = at(s);
        // smooth heading from a centred difference
        let (p0, _) = at((s - 1.0).max(0.0));
        let (p1, _) = at((s + 1.0).min(cum[cum.len() - 1]));
        let yaw = (p1[1] - p0[1]).atan2(p1[0] - p0[0]);
        let z = scene.height(p[0], p[1]) + MOUNT_HEIGHT;
        traj.push(
            s / speed,
            Pose3D::new(Vector3::new(p[0], p[1], z), UnitQuaternion::from_euler_angles(0.0, 0.0, yaw)),
        )?;
    }
    Ok(traj)
}

/// Scene with a single closed road loop of roughly `1011 m`, roadside
/// boxes and a hill, plus the loop centreline.
pub fn road_loop_scenario(seed: u64) -> (SceneSpec, Vec<[f64; 2]>) {
    use rand::{Rng, SeedableRng};
    let size = [310.0, 230.0];
    let loop_pts = rounded_rectangle([0.0, 0.0], size, 40.0, 1.0);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x0b57_ac1e);
    let mut obstacles = Vec::new();
    let n = loop_pts.len();
    let mut k = 0;
    while k < n {
        let (a, b) = (loop_pts[k], loop_pts[(k + 1) % n]);
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let l = dx.hypot(dy).max(1e-9);
        let side = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let off = side * rng.gen_range(7.0..14.0);
        let yaw = dy.atan2(dx);
        let big = rng.gen::<f64>() < 0.3;
        obstacles.push(BoxObstacle {
            center: [a[0] - dy / l * off, a[1] + dx / l * off],
            half: if big { [rng.gen_range(3.0..8.0), rng.gen_range(2.0..4.0)] } else { [2.2, 0.9] },
            yaw: yaw + rng.gen_range(-0.2..0.2),
            height: if big { rng.gen_range(3.0..8.0) } else { 1.5 },
        });
        k += rng.gen_range(20..45);
    }
    // hill across the southern straight
    let (y0, y1) = (-160.0, -70.0);
    let patches = vec![
        GroundPatch { min: [-60.0, y0], max: [-20.0, y1], height: 0.0, gradient: [0.03, 0.0] },
        GroundPatch { min: [-20.0, y0], max: [20.0, y1], height: 1.2, gradient: [0.0, 0.0] },
        GroundPatch { min: [20.0, y0], max: [60.0, y1], height: 1.2, gradient: [-0.03, 0.0] },
    ];
    let spec = SceneSpec {
        extent: [-size[0] / 2.0 - 80.0, -size[1] / 2.0 - 80.0, size[0] / 2.0 + 80.0, size[1] / 2.0 + 80.0],
        road_intensity: 0.32,
        base_intensity: 0.2,
        marking_intensity: 0.9,
        texture_amplitude: 0.3,
        texture_scale: 2.0,
        patches,
        roads: vec![Road {
            points: loop_pts.clone(),
            width: 8.0,
            closed: true,
            edge_lines: true,
            center_dash: Some([3.0, 6.0]),
            markings_per_100m: 8.0,
        }],
        markings: Vec::new(),
        obstacles,
        dynamic: Vec::new(),
        seed,
    };
    (spec, loop_pts)
}

/// Flat square world of `size` metres crossed by a road grid every
/// `spacing` metres.
pub fn road_grid_scenario(seed: u64, size: f64, spacing: f64) -> SceneSpec {
    let mut roads = Vec::new();
    let h = size / 2.0;
    let mut c = -h + spacing / 2.0;
    while c < h {
        for pts in [vec![[-h, c], [h, c]], vec![[c, -h], [c, h]]] {
            roads.push(Road {
                points: pts,
                width: 8.0,
                closed: false,
                edge_lines: true,
                center_dash: Some([3.0, 6.0]),
                markings_per_100m: 8.0,
            });
        }
        c += spacing;
    }
    SceneSpec {
        extent: [-h, -h, h, h],
        road_intensity: 0.32,
        base_intensity: 0.2,
        texture_amplitude: 0.3,
        roads,
        seed,
        ..Default::default()
    }
}

/// Noise-free BEV rendered straight from the scene surface over world cells
/// `origin .. origin + (width, height)`, using `sub x sub` supersampling.
/// Pixels for which `valid` is false stay masked out.
pub fn truth_bev(
    scene: &Scene,
    origin: [i64; 2],
    width: usize,
    height: usize,
    resolution: f64,
    factors: &NormalizationFactors,
    sub: usize,
    valid: impl Fn(f64, f64) -> bool,
) -> BevImage {
    let mut img = BevImage::empty(width, height, resolution, origin);
    let sub = sub.max(1);
    let e = 1e-3;
    for v in 0..height {
        for u in 0..width {
            let [cx, cy] = img.pixel_to_world(u as f64, v as f64);
            if !scene.contains(cx, cy) || !valid(cx, cy) {
                continue;
            }
            let mut acc = 0.0;
            for j in 0..sub {
                for i in 0..sub {
                    let x = cx + resolution * ((i as f64 + 0.5) / sub as f64 - 0.5);
                    let y = cy + resolution * ((j as f64 + 0.5) / sub as f64 - 0.5);
                    acc += scene.intensity(x, y);
                }
            }
            let gx = (scene.height(cx + e, cy) - scene.height(cx - e, cy)) / (2.0 * e);
            let gy = (scene.height(cx, cy + e) - scene.height(cx, cy - e)) / (2.0 * e);
            let slope = 1.0 - 1.0 / (1.0 + gx * gx + gy * gy).sqrt();
            let i = img.index(u, v);
            img.mask[i] = true;
            img.intensity[i] = (acc / (sub * sub) as f64).clamp(0.0, 1.0) as f32;
            img.slope[i] = (slope * factors.slope * SLOPE_DISPLAY_SCALE).clamp(0.0, 1.0) as f32;
        }
    }
    img
}

/// Mask of pixels within `radius` metres of any road centreline.
pub fn road_corridor_mask(spec: &SceneSpec, origin: [i64; 2], width: usize, height: usize, resolution: f64, radius: f64) -> Vec<bool> {
    let mut mask = vec![false; width * height];
    let r = (radius / resolution).ceil() as i64;
    for road in &spec.roads {
        let mut pts = road.points.clone();
        if road.closed {
            pts.push(pts[0]);
        }
        for w in pts.windows(2) {
            let len = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
            let n = (len / resolution).ceil().max(1.0) as usize;
            for k in 0..=n {
                let f = k as f64 / n as f64;
                let x = w[0][0] + f * (w[1][0] - w[0][0]);
                let y = w[0][1] + f * (w[1][1] - w[0][1]);
                let (cu, cv) = ((x / resolution).floor() as i64 - origin[0], (y / resolution).floor() as i64 - origin[1]);
                for dv in -r..=r {
                    let half = ((r * r - dv * dv) as f64).sqrt() as i64;
                    let vv = cv + dv;
                    if vv < 0 || vv >= height as i64 {
                        continue;
                    }
                    let row = vv as usize * width;
                    for uu in (cu - half).max(0)..=(cu + half).min(width as i64 - 1) {
                        mask[row + uu as usize] = true;
                    }
                }
            }
        }
    }
    mask
}
