use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::scene::Scene;
use crate::error::{Error, Result};
use crate::geom::{Point, PointCloud, Pose3D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanPattern {
    /// Spinning multi-beam: `channels` rings over the full circle.
    Rings360,
    /// Forward wedge of `fov_deg` azimuth.
    WedgeFov,
    /// Non-repetitive rosette covering a forward cone.
    RasterLissajous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorModel {
    pub pattern: ScanPattern,
    pub channels: usize,
    /// Samples per channel (rings, wedge) or in total divided by channels (rosette).
    pub samples_per_channel: usize,
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
    /// Azimuth field of view for the wedge and rosette patterns.
    pub fov_deg: f64,
    pub max_range: f64,
    /// Raw intensity = reflectivity * gain + noise.
    pub gain: f64,
    pub sigma_range: f64,
    pub sigma_intensity: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self::profile("hdl64e").expect("built-in profile")
    }
}

impl SensorModel {
    /// Built-in sensor stand-ins. Gains undo the per-sensor intensity
    /// normalization so normalized reflectivity lands in [0, 1].
    pub fn profile(name: &str) -> Option<Self> {
        let factor = crate::bev::NormalizationFactors::for_sensor(name)?.intensity;
        let base = SensorModel {
            pattern: ScanPattern::Rings360,
            channels: 64,
            samples_per_channel: 1563,
            elevation_min_deg: -24.9,
            elevation_max_deg: 2.0,
            fov_deg: 360.0,
            max_range: 120.0,
            gain: 1.0 / factor,
            sigma_range: 0.02,
            sigma_intensity: 0.02 / factor,
        };
        Some(match name {
            "hdl64e" | "os1_64" => base,
            "os2_128" => SensorModel {
                channels: 128,
                samples_per_channel: 1024,
                elevation_min_deg: -22.5,
                elevation_max_deg: 22.5,
                ..base
            },
            "aeva" => SensorModel {
                pattern: ScanPattern::WedgeFov,
                channels: 64,
                samples_per_channel: 1000,
                elevation_min_deg: -15.0,
                elevation_max_deg: 5.0,
                fov_deg: 120.0,
                ..base
            },
            "avia" => SensorModel {
                pattern: ScanPattern::RasterLissajous,
                channels: 64,
                samples_per_channel: 1200,
                elevation_min_deg: -19.0,
                elevation_max_deg: 19.0,
                fov_deg: 70.0,
                ..base
            },
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.channels > 0
            && self.samples_per_channel > 0
            && self.max_range > 0.0
            && self.gain > 0.0
            && self.sigma_range >= 0.0
            && self.sigma_intensity >= 0.0
            && self.fov_deg > 0.0
            && self.elevation_max_deg >= self.elevation_min_deg;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("sensor model parameters must be positive".into()))
        }
    }

    /// Unit ray directions in the sensor frame (x forward, z up).
    pub fn directions(&self) -> Vec<[f64; 3]> {
        let el = |k: usize, n: usize| {
            let f = if n > 1 { k as f64 / (n - 1) as f64 } else { 0.5 };
            (self.elevation_min_deg + f * (self.elevation_max_deg - self.elevation_min_deg)).to_radians()
        };
        let dir = |az: f64, el: f64| [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()];
        let (c, m) = (self.channels, self.samples_per_channel);
        let mut out = Vec::with_capacity(c * m);
        match self.pattern {
            ScanPattern::Rings360 => {
                for k in 0..c {
                    let e = el(k, c);
                    for i in 0..m {
                        out.push(dir(2.0 * PI * i as f64 / m as f64 - PI, e));
                    }
                }
            }
            ScanPattern::WedgeFov => {
                let half = self.fov_deg.to_radians() / 2.0;
                for k in 0..c {
                    let e = el(k, c);
                    for i in 0..m {
                        let f = if m > 1 { i as f64 / (m - 1) as f64 } else { 0.5 };
                        out.push(dir(-half + 2.0 * half * f, e));
                    }
                }
            }
            ScanPattern::RasterLissajous => {
                let half = self.fov_deg.to_radians() / 2.0;
                let mid = (self.elevation_min_deg + self.elevation_max_deg).to_radians() / 2.0;
                let span = (self.elevation_max_deg - self.elevation_min_deg).to_radians() / 2.0;
                let n = c * m;
                for i in 0..n {
                    let t = 2.0 * PI * i as f64 / n as f64;
                    let az = half * (97.0 * t).sin();
                    let e = mid + span * (89.0 * t + 0.5).sin();
                    out.push(dir(az, e));
                }
            }
        }
        out
    }
}

/// Sweeps the sensor at `pose` (sensor-to-world) through the scene at time
/// `time`. Points are returned in the sensor frame.
pub fn simulate_scan(scene: &Scene, pose: &Pose3D, model: &SensorModel, time: f64, seed: u64) -> PointCloud {
    let dirs = model.directions();
    simulate_with(scene, pose, model, &dirs, time, seed)
}

pub(crate) fn simulate_with(
    scene: &Scene,
    pose: &Pose3D,
    model: &SensorModel,
    dirs: &[[f64; 3]],
    time: f64,
    seed: u64,
) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ time.to_bits().rotate_left(17));
    let range_noise = Normal::new(0.0, model.sigma_range).unwrap();
    let int_noise = Normal::new(0.0, model.sigma_intensity).unwrap();
    let o = pose.translation;
    let origin = [o.x, o.y, o.z];
    let mut boxes = scene.boxes_at(time);
    boxes.retain(|b| {
        (b.center[0] - o.x).hypot(b.center[1] - o.y) <= model.max_range + b.half[0].hypot(b.half[1])
    });
    let r = pose.rotation.to_rotation_matrix();
    let mut points = Vec::with_capacity(dirs.len());
    for d in dirs {
        let w = r * nalgebra::Vector3::new(d[0], d[1], d[2]);
        let hit = scene.cast(origin, [w.x, w.y, w.z], model.max_range, &boxes);
        // draw noise for every ray so streams stay aligned across scenes
        let dr = range_noise.sample(&mut rng);
        let di = int_noise.sample(&mut rng);
        let Some(h) = hit else { continue };
        let range = (h.range + dr).max(0.0);
        let intensity = (h.reflectivity * model.gain + di).max(0.0);
        points.push(Point::new(
            (d[0] * range) as f32,
            (d[1] * range) as f32,
            (d[2] * range) as f32,
            intensity as f32,
        ));
    }
    PointCloud { points, stamp: time, frame_id: "sensor".into() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::scene::{generate_scene, BoxObstacle, SceneSpec};
    use nalgebra::{UnitQuaternion, Vector3};

    fn small(pattern: ScanPattern) -> SensorModel {
        SensorModel {
            pattern,
            channels: 16,
            samples_per_channel: 360,
            elevation_min_deg: -25.0,
            elevation_max_deg: -2.0,
            fov_deg: 70.0,
            max_range: 80.0,
            gain: 1.0,
            sigma_range: 0.02,
            sigma_intensity: 0.0,
        }
    }

    fn at(x: f64, y: f64, yaw: f64) -> Pose3D {
        Pose3D::new(Vector3::new(x, y, 1.8), UnitQuaternion::from_euler_angles(0.0, 0.0, yaw))
    }

    #[test]
    fn flat_ground_within_noise() {
        let scene = generate_scene(&SceneSpec::default()).unwrap();
        let m = small(ScanPattern::Rings360);
        let pose = at(0.0, 0.0, 0.4);
        let cloud = simulate_scan(&scene, &pose, &m, 0.0, 1);
        assert!(cloud.points.len() > 5000);
        let ok = cloud
            .points
            .iter()
            .filter(|p| {
                let w = pose.transform_point(Vector3::new(p.x as f64, p.y as f64, p.z as f64));
                w.z.abs() <= 3.0 * m.sigma_range
            })
            .count();
        assert!(ok as f64 >= 0.99 * cloud.points.len() as f64);
    }

    #[test]
    fn exact_without_noise() {
        let scene = generate_scene(&SceneSpec::default()).unwrap();
        let m = SensorModel { sigma_range: 0.0, ..small(ScanPattern::Rings360) };
        let pose = at(3.0, -2.0, 1.0);
        for p in simulate_scan(&scene, &pose, &m, 0.0, 1).points {
            let w = pose.transform_point(Vector3::new(p.x as f64, p.y as f64, p.z as f64));
            assert!(w.z.abs() < 1e-4);
        }
    }

    #[test]
    fn wedge_gate() {
        let scene = generate_scene(&SceneSpec::default()).unwrap();
        let m = small(ScanPattern::WedgeFov);
        for pattern in [ScanPattern::WedgeFov, ScanPattern::RasterLissajous] {
            let m = SensorModel { pattern, ..m.clone() };
            let cloud = simulate_scan(&scene, &at(0.0, 0.0, 0.0), &m, 0.0, 1);
            assert!(!cloud.points.is_empty());
            for p in &cloud.points {
                assert!((p.y as f64).atan2(p.x as f64).abs() <= 35f64.to_radians() + 1e-6);
            }
        }
    }

    #[test]
    fn obstacle_shadows_ground() {
        let spec = SceneSpec {
            obstacles: vec![BoxObstacle { center: [10.0, 0.0], half: [0.5, 2.0], yaw: 0.0, height: 3.0 }],
            ..Default::default()
        };
        let scene = generate_scene(&spec).unwrap();
        let m = small(ScanPattern::Rings360);
        let pose = at(0.0, 0.0, 0.0);
        for p in simulate_scan(&scene, &pose, &m, 0.0, 1).points {
            let az = (p.y as f64).atan2(p.x as f64);
            // ground points directly behind the box cannot exist
            if az.abs() < 0.1 && p.z < -1.5 {
                assert!(p.x < 9.6, "ground return behind the obstacle at x={}", p.x);
            }
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let spec = SceneSpec { texture_amplitude: 0.3, ..Default::default() };
        let scene = generate_scene(&spec).unwrap();
        let m = small(ScanPattern::RasterLissajous);
        let a = simulate_scan(&scene, &at(1.0, 2.0, 0.3), &m, 0.5, 9);
        let b = simulate_scan(&scene, &at(1.0, 2.0, 0.3), &m, 0.5, 9);
        assert_eq!(a, b);
    }

    #[test]
    fn profiles_are_valid() {
        for s in crate::ground_grid::SegmenterConfig::SENSORS {
            SensorModel::profile(s).unwrap().validate().unwrap();
        }
        let m = SensorModel::profile("hdl64e").unwrap();
        assert!(m.directions().len() >= 100_000);
    }
}
