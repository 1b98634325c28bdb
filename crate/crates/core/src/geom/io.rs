use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};

use super::{point_is_valid, Point, PointCloud, Pose3D, Trajectory};
use crate::error::{Error, Result};

const POINT_STRIDE: usize = 16;
const QUAT_TOLERANCE: f64 = 1e-3;

/// Reads a KITTI-style `.bin` sweep: little-endian `f32` quadruples `x y z intensity`.
pub fn load_pointcloud_bin(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % POINT_STRIDE != 0 {
        return Err(Error::malformed(
            path,
            format!("size {} is not a multiple of {POINT_STRIDE}", bytes.len()),
        ));
    }
    let points = bytes
        .chunks_exact(POINT_STRIDE)
        .map(|c| {
            let f = |i: usize| f32::from_le_bytes([c[i], c[i + 1], c[i + 2], c[i + 3]]);
            Point::new(f(0), f(4), f(8), f(12))
        })
        .collect::<Vec<_>>();
    if let Some(index) = points.iter().position(|p| !point_is_valid(p)) {
        return Err(Error::NonFinitePoint { index });
    }
    let frame_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(PointCloud {
        points,
        stamp: 0.0,
        frame_id,
    })
}

pub fn save_pointcloud_bin(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(cloud.points.len() * POINT_STRIDE);
    for p in &cloud.points {
        for v in [p.x, p.y, p.z, p.intensity] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryFormat {
    /// `stamp tx ty tz qx qy qz qw` per line.
    Tum,
    /// Row-major 3x4 pose matrix per line; stamps are the line indices.
    KittiMat,
}

impl std::str::FromStr for TrajectoryFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tum" => Ok(Self::Tum),
            "kitti" | "kitti_mat" => Ok(Self::KittiMat),
            other => Err(Error::Config(format!("unknown trajectory format '{other}'"))),
        }
    }
}

pub fn load_trajectory(path: impl AsRef<Path>, format: TrajectoryFormat) -> Result<Trajectory> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trajectory(&text, format)
}

pub(crate) fn parse_trajectory(text: &str, format: TrajectoryFormat) -> Result<Trajectory> {
    let mut traj = Trajectory::new();
    let mut index = 0usize;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let values = trimmed
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    reason: format!("invalid number '{t}'"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let (stamp, pose) = match format {
            TrajectoryFormat::Tum => parse_tum(&values, line)?,
            TrajectoryFormat::KittiMat => (index as f64, parse_kitti(&values, line)?),
        };
        index += 1;
        if let Some(&prev) = traj.stamps().last() {
            if !(stamp > prev) {
                return Err(Error::NonMonotonicStamps { line, prev, stamp });
            }
        }
        traj.push(stamp, pose)?;
    }
    Ok(traj)
}

fn parse_tum(v: &[f64], line: usize) -> Result<(f64, Pose3D)> {
    if v.len() != 8 {
        return Err(Error::Parse {
            line,
            reason: format!("expected 8 values, found {}", v.len()),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Parse {
            line,
            reason: "non-finite value".into(),
        });
    }
    let q = Quaternion::new(v[7], v[4], v[5], v[6]);
    let norm = q.norm();
    if (norm - 1.0).abs() >= QUAT_TOLERANCE {
        return Err(Error::BadQuaternion { line, norm });
    }
    // Leave already-unit quaternions untouched so that save/load is lossless.
    let rotation = if (norm - 1.0).abs() <= 1e-12 {
        UnitQuaternion::new_unchecked(q)
    } else {
        UnitQuaternion::new_normalize(q)
    };
    Ok((v[0], Pose3D::new(Vector3::new(v[1], v[2], v[3]), rotation)))
}

fn parse_kitti(v: &[f64], line: usize) -> Result<Pose3D> {
    if v.len() != 12 {
        return Err(Error::Parse {
            line,
            reason: format!("expected 12 values, found {}", v.len()),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Parse {
            line,
            reason: "non-finite value".into(),
        });
    }
    let m = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
    let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
    if ortho >= QUAT_TOLERANCE || m.determinant() <= 0.0 {
        return Err(Error::BadQuaternion {
            line,
            norm: 1.0 + ortho,
        });
    }
    let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m));
    Ok(Pose3D::new(Vector3::new(v[3], v[7], v[11]), rotation))
}

pub fn save_trajectory(
    traj: &Trajectory,
    path: impl AsRef<Path>,
    format: TrajectoryFormat,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_trajectory(traj, format)).map_err(|e| Error::io(path, e))
}

pub(crate) fn format_trajectory(traj: &Trajectory, format: TrajectoryFormat) -> String {
    let mut out = String::new();
    for (stamp, pose) in traj.iter() {
        let t = pose.translation;
        match format {
            TrajectoryFormat::Tum => {
                let q = pose.rotation.quaternion();
                let _ = writeln!(
                    out,
                    "{} {} {} {} {} {} {} {}",
                    stamp, t.x, t.y, t.z, q.i, q.j, q.k, q.w
                );
            }
            TrajectoryFormat::KittiMat => {
                let r = pose.rotation.to_rotation_matrix();
                let m = r.matrix();
                let _ = writeln!(
                    out,
                    "{} {} {} {} {} {} {} {} {} {} {} {}",
                    m[(0, 0)],
                    m[(0, 1)],
                    m[(0, 2)],
                    t.x,
                    m[(1, 0)],
                    m[(1, 1)],
                    m[(1, 2)],
                    t.y,
                    m[(2, 0)],
                    m[(2, 1)],
                    m[(2, 2)],
                    t.z
                );
            }
        }
    }
    out
}
