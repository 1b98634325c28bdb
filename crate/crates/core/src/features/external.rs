//! Sidecar files produced by an out-of-process keypoint extractor.
//!
//! Layout: one ASCII header line `BEVFEAT 1 <N> <D>\n`, followed by `N`
//! little-endian `f32` records of `5 + D` values each:
//! `u, v, scale, repeatability, reliability, descriptor[D]`.
//! `u`/`v` are raster coordinates in the BEV image the file belongs to.
//! Only `D = 128` is accepted on load.

use std::io::{BufWriter, Write};
use std::path::Path;

use super::{Descriptor, FeatureSet, FeatureSource, Keypoint, DESCRIPTOR_DIM};
use crate::bev::BevImage;
use crate::error::{Error, Result};

const MAGIC: &str = "BEVFEAT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalRecord {
    pub u: f32,
    pub v: f32,
    pub scale: f32,
    pub repeatability: f32,
    pub reliability: f32,
    pub descriptor: Vec<f32>,
}

pub fn write_external_features(path: &Path, records: &[ExternalRecord]) -> Result<()> {
    let dim = records.first().map_or(DESCRIPTOR_DIM, |r| r.descriptor.len());
    if records.iter().any(|r| r.descriptor.len() != dim) {
        return Err(Error::malformed(path, "records have differing descriptor lengths"));
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "{MAGIC} {VERSION} {} {dim}", records.len())?;
        for r in records {
            for x in [r.u, r.v, r.scale, r.repeatability, r.reliability] {
                w.write_all(&x.to_le_bytes())?;
            }
            for x in &r.descriptor {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

/// Reads a sidecar file for `img`. Keypoint score is repeatability times
/// reliability; orientation is not part of the format and is set to 0.
pub fn load_external_features(path: &Path, img: &BevImage) -> Result<FeatureSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::malformed(path, "missing header line"))?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| Error::malformed(path, "header is not ASCII"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != MAGIC {
        return Err(Error::malformed(path, format!("bad header {header:?}")));
    }
    let parse = |s: &str, what: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::malformed(path, format!("bad {what} {s:?}")))
    };
    if parse(fields[1], "version")? != VERSION as usize {
        return Err(Error::malformed(path, format!("unsupported version {}", fields[1])));
    }
    let n = parse(fields[2], "count")?;
    let dim = parse(fields[3], "descriptor dimension")?;
    if dim != DESCRIPTOR_DIM {
        return Err(Error::UnsupportedDescriptor(dim));
    }
    let body = &bytes[nl + 1..];
    let rec_len = (5 + dim) * 4;
    if body.len() != n * rec_len {
        return Err(Error::malformed(
            path,
            format!("header declares {n} records but body holds {} bytes", body.len()),
        ));
    }
    let mut fs = FeatureSet::empty(FeatureSource::External, img.origin, img.resolution);
    for rec in body.chunks_exact(rec_len) {
        let vals: Vec<f32> = rec
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::malformed(path, "non-finite value in record"));
        }
        let mut desc: Descriptor = [0.0; DESCRIPTOR_DIM];
        desc.copy_from_slice(&vals[5..]);
        fs.push(
            Keypoint {
                u: vals[0] as f64,
                v: vals[1] as f64,
                scale: vals[2] as f64,
                orientation: 0.0,
                score: vals[3] as f64 * vals[4] as f64,
            },
            desc,
        );
    }
    Ok(fs)
}
