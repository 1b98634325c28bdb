//! Minimal tiled GeoTIFF codec for prior maps.
//!
//! Written files are little-endian baseline TIFF with:
//! 256x256 tiles, 3 samples of 8 bits, chunky layout, RGB photometric,
//! horizontal-differencing predictor, ZSTD (50000) or DEFLATE (8)
//! compression, and georeferencing through ModelPixelScaleTag (33550),
//! ModelTiepointTag (33922, raster corner (0, 0) -> top-left world corner)
//! and a GeoKeyDirectoryTag (34735) declaring a projected, user-defined
//! metric frame with PixelIsArea raster space.
//!
//! Rows are stored north-up: TIFF row 0 is the largest y. Tiles with no
//! data are written with offset 0 and byte count 0 and read back as absent.
//! The reader accepts compression 1, 8, 32946 and 50000 and predictor 1 or 2.

use std::fs::File;
use std::io::{BufReader, Read, Seek, SeekFrom, Write};
use std::path::Path;
use std::sync::Arc;

use flate2::read::ZlibDecoder;
use flate2::write::ZlibEncoder;

use super::{PriorMap, TILE_SIZE};
use crate::error::{Error, Result};

const TAG_IMAGE_WIDTH: u16 = 256;
const TAG_IMAGE_LENGTH: u16 = 257;
const TAG_BITS_PER_SAMPLE: u16 = 258;
const TAG_COMPRESSION: u16 = 259;
const TAG_PHOTOMETRIC: u16 = 262;
const TAG_SAMPLES_PER_PIXEL: u16 = 277;
const TAG_PLANAR_CONFIG: u16 = 284;
const TAG_PREDICTOR: u16 = 317;
const TAG_TILE_WIDTH: u16 = 322;
const TAG_TILE_LENGTH: u16 = 323;
const TAG_TILE_OFFSETS: u16 = 324;
const TAG_TILE_BYTE_COUNTS: u16 = 325;
const TAG_SAMPLE_FORMAT: u16 = 339;
const TAG_PIXEL_SCALE: u16 = 33550;
const TAG_TIEPOINT: u16 = 33922;
const TAG_GEO_KEYS: u16 = 34735;

const TYPE_BYTE: u16 = 1;
const TYPE_SHORT: u16 = 3;
const TYPE_LONG: u16 = 4;
const TYPE_DOUBLE: u16 = 12;

const COMPRESSION_NONE: u16 = 1;
const COMPRESSION_DEFLATE: u16 = 8;
const COMPRESSION_DEFLATE_OLD: u16 = 32946;
const COMPRESSION_ZSTD: u16 = 50000;

const TILE_BYTES: usize = TILE_SIZE * TILE_SIZE * 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Compression {
    Zstd(i32),
    Deflate(u32),
}

impl Default for Compression {
    fn default() -> Self {
        Compression::Zstd(9)
    }
}

impl Compression {
    fn code(&self) -> u16 {
        match self {
            Compression::Zstd(_) => COMPRESSION_ZSTD,
            Compression::Deflate(_) => COMPRESSION_DEFLATE,
        }
    }

    fn encode(&self, raw: &[u8]) -> std::io::Result<Vec<u8>> {
        match *self {
            Compression::Zstd(level) => zstd::bulk::compress(raw, level),
            Compression::Deflate(level) => {
                let mut e = ZlibEncoder::new(Vec::new(), flate2::Compression::new(level.min(9)));
                e.write_all(raw)?;
                e.finish()
            }
        }
    }
}

/// Parsed header of a map file: everything except the tile payloads.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoTiffInfo {
    pub width: usize,
    pub height: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub compression: u16,
    pub predictor: u16,
    pub resolution: f64,
    /// Global pixel index of the bottom-left corner of the tile grid.
    pub origin: [i64; 2],
    /// Indexed by TIFF tile order (row-major from the top).
    pub tile_offsets: Vec<u64>,
    pub tile_byte_counts: Vec<u64>,
}

impl GeoTiffInfo {
    /// TIFF tile index of map tile `(col, row)` (row along +y).
    pub fn tiff_index(&self, col: usize, row: usize) -> usize {
        (self.tiles_y - 1 - row) * self.tiles_x + col
    }

    /// Decodes one tile into map layout (rows along +y); `None` for an
    /// empty tile.
    pub fn decode_tile<R: Read + Seek>(&self, src: &mut R, col: usize, row: usize, path: &Path) -> Result<Option<Vec<u8>>> {
        let k = self.tiff_index(col, row);
        let (off, len) = (self.tile_offsets[k], self.tile_byte_counts[k]);
        if len == 0 {
            return Ok(None);
        }
        let mut buf = vec![0u8; len as usize];
        src.seek(SeekFrom::Start(off)).map_err(|e| Error::io(path, e))?;
        src.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
        let mut raw = match self.compression {
            COMPRESSION_NONE => buf,
            COMPRESSION_ZSTD => zstd::bulk::decompress(&buf, TILE_BYTES)
                .map_err(|e| Error::malformed(path, format!("zstd tile {k}: {e}")))?,
            COMPRESSION_DEFLATE | COMPRESSION_DEFLATE_OLD => {
                let mut out = Vec::with_capacity(TILE_BYTES);
                ZlibDecoder::new(&buf[..])
                    .read_to_end(&mut out)
                    .map_err(|e| Error::malformed(path, format!("deflate tile {k}: {e}")))?;
                out
            }
            c => return Err(Error::UnsupportedCompression(c)),
        };
        if raw.len() != TILE_BYTES {
            return Err(Error::malformed(path, format!("tile {k} decodes to {} bytes", raw.len())));
        }
        if self.predictor == 2 {
            for r in raw.chunks_exact_mut(TILE_SIZE * 3) {
                for i in 3..r.len() {
                    r[i] = r[i].wrapping_add(r[i - 3]);
                }
            }
        }
        Ok(Some(flip_rows(&raw)))
    }
}

fn flip_rows(tile: &[u8]) -> Vec<u8> {
    let row = TILE_SIZE * 3;
    let mut out = Vec::with_capacity(tile.len());
    for r in tile.chunks_exact(row).rev() {
        out.extend_from_slice(r);
    }
    out
}

struct Entry {
    tag: u16,
    typ: u16,
    count: u32,
    bytes: Vec<u8>,
}

fn shorts(tag: u16, v: &[u16]) -> Entry {
    Entry {
        tag,
        typ: TYPE_SHORT,
        count: v.len() as u32,
        bytes: v.iter().flat_map(|x| x.to_le_bytes()).collect(),
    }
}

fn longs(tag: u16, v: &[u32]) -> Entry {
    Entry {
        tag,
        typ: TYPE_LONG,
        count: v.len() as u32,
        bytes: v.iter().flat_map(|x| x.to_le_bytes()).collect(),
    }
}

fn doubles(tag: u16, v: &[f64]) -> Entry {
    Entry {
        tag,
        typ: TYPE_DOUBLE,
        count: v.len() as u32,
        bytes: v.iter().flat_map(|x| x.to_le_bytes()).collect(),
    }
}

/// GeoKeyDirectory: projected model, PixelIsArea, user-defined projected
/// CRS, linear unit metre.
fn geo_keys() -> Vec<u16> {
    vec![
        1, 1, 0, 4, //
        1024, 0, 1, 1, // GTModelTypeGeoKey = projected
        1025, 0, 1, 1, // GTRasterTypeGeoKey = PixelIsArea
        3072, 0, 1, 32767, // ProjectedCSTypeGeoKey = user-defined
        3076, 0, 1, 9001, // ProjLinearUnitsGeoKey = metre
    ]
}

/// Writes `map` with ZSTD, falling back to DEFLATE if ZSTD encoding fails.
pub fn write_geotiff(map: &PriorMap, path: &Path) -> Result<()> {
    match write_geotiff_with(map, path, Compression::default()) {
        Err(Error::Io { .. }) => write_geotiff_with(map, path, Compression::Deflate(6)),
        r => r,
    }
}

pub fn write_geotiff_with(map: &PriorMap, path: &Path, compression: Compression) -> Result<()> {
    let bytes = encode_geotiff(map, compression).map_err(|e| Error::io(path, e))?;
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn encode_geotiff(map: &PriorMap, compression: Compression) -> std::io::Result<Vec<u8>> {
    let (tx, ty) = (map.tiles_x, map.tiles_y);
    let n = tx * ty;
    let mut out: Vec<u8> = b"II*\0\0\0\0\0".to_vec();
    let mut offsets = vec![0u32; n];
    let mut counts = vec![0u32; n];
    for trow in 0..ty {
        for col in 0..tx {
            let row = ty - 1 - trow;
            let Some(tile) = map.tiles.get(&(col, row)) else {
                continue;
            };
            let mut raw = flip_rows(tile);
            for r in raw.chunks_exact_mut(TILE_SIZE * 3) {
                for i in (3..r.len()).rev() {
                    r[i] = r[i].wrapping_sub(r[i - 3]);
                }
            }
            let enc = compression.encode(&raw)?;
            let k = trow * tx + col;
            offsets[k] = out.len() as u32;
            counts[k] = enc.len() as u32;
            out.extend_from_slice(&enc);
            if out.len() % 2 == 1 {
                out.push(0);
            }
        }
    }
    let res = map.resolution;
    let height = map.height();
    let top = (map.origin[1] + height as i64) as f64 * res;
    let left = map.origin[0] as f64 * res;
    let entries = vec![
        longs(TAG_IMAGE_WIDTH, &[map.width() as u32]),
        longs(TAG_IMAGE_LENGTH, &[height as u32]),
        shorts(TAG_BITS_PER_SAMPLE, &[8, 8, 8]),
        shorts(TAG_COMPRESSION, &[compression.code()]),
        shorts(TAG_PHOTOMETRIC, &[2]),
        shorts(TAG_SAMPLES_PER_PIXEL, &[3]),
        shorts(TAG_PLANAR_CONFIG, &[1]),
        shorts(TAG_PREDICTOR, &[2]),
        longs(TAG_TILE_WIDTH, &[TILE_SIZE as u32]),
        longs(TAG_TILE_LENGTH, &[TILE_SIZE as u32]),
        longs(TAG_TILE_OFFSETS, &offsets),
        longs(TAG_TILE_BYTE_COUNTS, &counts),
        shorts(TAG_SAMPLE_FORMAT, &[1, 1, 1]),
        doubles(TAG_PIXEL_SCALE, &[res, res, 0.0]),
        doubles(TAG_TIEPOINT, &[0.0, 0.0, 0.0, left, top, 0.0]),
        shorts(TAG_GEO_KEYS, &geo_keys()),
    ];
    let ifd_offset = out.len() as u32;
    out[4..8].copy_from_slice(&ifd_offset.to_le_bytes());
    let ifd_len = 2 + entries.len() * 12 + 4;
    let mut extra_at = ifd_offset as usize + ifd_len;
    let mut ifd = Vec::with_capacity(ifd_len);
    let mut extra = Vec::new();
    ifd.extend_from_slice(&(entries.len() as u16).to_le_bytes());
    for e in &entries {
        ifd.extend_from_slice(&e.tag.to_le_bytes());
        ifd.extend_from_slice(&e.typ.to_le_bytes());
        ifd.extend_from_slice(&e.count.to_le_bytes());
        if e.bytes.len() <= 4 {
            let mut v = [0u8; 4];
            v[..e.bytes.len()].copy_from_slice(&e.bytes);
            ifd.extend_from_slice(&v);
        } else {
            ifd.extend_from_slice(&(extra_at as u32).to_le_bytes());
            extra.extend_from_slice(&e.bytes);
            extra_at += e.bytes.len();
            if extra.len() % 2 == 1 {
                extra.push(0);
                extra_at += 1;
            }
        }
    }
    ifd.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&ifd);
    out.extend_from_slice(&extra);
    Ok(out)
}

fn type_size(typ: u16) -> Option<usize> {
    match typ {
        1 | 2 | 6 | 7 => Some(1),
        3 | 8 => Some(2),
        4 | 9 | 11 => Some(4),
        5 | 10 | 12 | 16 | 17 => Some(8),
        _ => None,
    }
}

struct RawEntry {
    typ: u16,
    data: Vec<u8>,
}

impl RawEntry {
    fn ints(&self) -> Option<Vec<u64>> {
        let d = &self.data;
        Some(match self.typ {
            TYPE_BYTE => d.iter().map(|&b| b as u64).collect(),
            TYPE_SHORT => d.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]]) as u64).collect(),
            TYPE_LONG => d
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as u64)
                .collect(),
            16 => d
                .chunks_exact(8)
                .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            _ => return None,
        })
    }

    fn doubles(&self) -> Option<Vec<f64>> {
        match self.typ {
            TYPE_DOUBLE => Some(
                self.data
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            11 => Some(
                self.data
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect(),
            ),
            _ => None,
        }
    }
}

/// Parses and validates the header of a map file.
pub fn read_info<R: Read + Seek>(src: &mut R, path: &Path) -> Result<GeoTiffInfo> {
    let io = |e| Error::io(path, e);
    let mut head = [0u8; 8];
    src.seek(SeekFrom::Start(0)).map_err(io)?;
    src.read_exact(&mut head).map_err(io)?;
    match &head[..4] {
        b"II*\0" => {}
        b"MM\0*" => return Err(Error::UnsupportedTiff("big-endian byte order".into())),
        b"II+\0" => return Err(Error::UnsupportedTiff("BigTIFF".into())),
        _ => return Err(Error::malformed(path, "not a TIFF file")),
    }
    let ifd = u32::from_le_bytes(head[4..8].try_into().unwrap()) as u64;
    src.seek(SeekFrom::Start(ifd)).map_err(io)?;
    let mut nbuf = [0u8; 2];
    src.read_exact(&mut nbuf).map_err(io)?;
    let n = u16::from_le_bytes(nbuf) as usize;
    let mut table = vec![0u8; n * 12];
    src.read_exact(&mut table).map_err(io)?;
    let mut entries = std::collections::BTreeMap::new();
    for e in table.chunks_exact(12) {
        let tag = u16::from_le_bytes([e[0], e[1]]);
        let typ = u16::from_le_bytes([e[2], e[3]]);
        let count = u32::from_le_bytes(e[4..8].try_into().unwrap()) as usize;
        let Some(size) = type_size(typ) else {
            continue;
        };
        let len = size
            .checked_mul(count)
            .filter(|&l| l <= 1 << 28)
            .ok_or_else(|| Error::malformed(path, format!("tag {tag} too large")))?;
        let data = if len <= 4 {
            e[8..8 + len].to_vec()
        } else {
            let off = u32::from_le_bytes(e[8..12].try_into().unwrap()) as u64;
            let mut d = vec![0u8; len];
            src.seek(SeekFrom::Start(off)).map_err(io)?;
            src.read_exact(&mut d).map_err(io)?;
            d
        };
        entries.insert(tag, RawEntry { typ, data });
    }

    let int = |tag: u16, name: &str| -> Result<Vec<u64>> {
        entries
            .get(&tag)
            .and_then(|e| e.ints())
            .filter(|v| !v.is_empty())
            .ok_or_else(|| Error::malformed(path, format!("missing or invalid {name}")))
    };
    let int_or = |tag: u16, default: u64| -> Result<u64> {
        match entries.get(&tag) {
            None => Ok(default),
            Some(e) => e
                .ints()
                .and_then(|v| v.first().copied())
                .ok_or_else(|| Error::malformed(path, format!("invalid tag {tag}"))),
        }
    };

    let compression = int_or(TAG_COMPRESSION, 1)? as u16;
    if ![COMPRESSION_NONE, COMPRESSION_DEFLATE, COMPRESSION_DEFLATE_OLD, COMPRESSION_ZSTD].contains(&compression) {
        return Err(Error::UnsupportedCompression(compression));
    }
    let width = int(TAG_IMAGE_WIDTH, "ImageWidth")?[0] as usize;
    let height = int(TAG_IMAGE_LENGTH, "ImageLength")?[0] as usize;
    if int_or(TAG_SAMPLES_PER_PIXEL, 1)? != 3 {
        return Err(Error::UnsupportedTiff("samples per pixel must be 3".into()));
    }
    if int(TAG_BITS_PER_SAMPLE, "BitsPerSample")?.iter().any(|&b| b != 8) {
        return Err(Error::UnsupportedTiff("bits per sample must be 8".into()));
    }
    if int_or(TAG_PLANAR_CONFIG, 1)? != 1 {
        return Err(Error::UnsupportedTiff("planar configuration must be chunky".into()));
    }
    if let Some(e) = entries.get(&TAG_SAMPLE_FORMAT) {
        if e.ints().is_none_or(|v| v.iter().any(|&f| f != 1)) {
            return Err(Error::UnsupportedTiff("sample format must be unsigned integer".into()));
        }
    }
    let predictor = int_or(TAG_PREDICTOR, 1)? as u16;
    if predictor != 1 && predictor != 2 {
        return Err(Error::UnsupportedTiff(format!("predictor {predictor}")));
    }
    let (Some(tw), Some(tl)) = (entries.get(&TAG_TILE_WIDTH), entries.get(&TAG_TILE_LENGTH)) else {
        return Err(Error::UnsupportedTiff("strip layout; tiles required".into()));
    };
    let tw = tw.ints().and_then(|v| v.first().copied()).unwrap_or(0);
    let tl = tl.ints().and_then(|v| v.first().copied()).unwrap_or(0);
    if tw != TILE_SIZE as u64 || tl != TILE_SIZE as u64 {
        return Err(Error::UnsupportedTiff(format!("tile size {tw}x{tl}, expected {TILE_SIZE}")));
    }
    let tiles_x = width.div_ceil(TILE_SIZE);
    let tiles_y = height.div_ceil(TILE_SIZE);
    let tile_offsets = int(TAG_TILE_OFFSETS, "TileOffsets")?;
    let tile_byte_counts = int(TAG_TILE_BYTE_COUNTS, "TileByteCounts")?;
    if tile_offsets.len() != tiles_x * tiles_y || tile_byte_counts.len() != tiles_x * tiles_y {
        return Err(Error::malformed(path, "tile table size does not match image size"));
    }

    let scale = entries
        .get(&TAG_PIXEL_SCALE)
        .ok_or(Error::NotGeoreferenced("ModelPixelScaleTag"))?
        .doubles()
        .filter(|v| v.len() >= 2)
        .ok_or_else(|| Error::malformed(path, "invalid ModelPixelScaleTag"))?;
    let tie = entries
        .get(&TAG_TIEPOINT)
        .ok_or(Error::NotGeoreferenced("ModelTiepointTag"))?
        .doubles()
        .filter(|v| v.len() >= 6)
        .ok_or_else(|| Error::malformed(path, "invalid ModelTiepointTag"))?;
    let keys = entries
        .get(&TAG_GEO_KEYS)
        .ok_or(Error::NotGeoreferenced("GeoKeyDirectoryTag"))?
        .ints()
        .filter(|v| v.len() >= 4)
        .ok_or_else(|| Error::malformed(path, "invalid GeoKeyDirectoryTag"))?;
    if keys[0] != 1 {
        return Err(Error::UnsupportedTiff(format!("geokey directory version {}", keys[0])));
    }
    let res = scale[0];
    if !(res > 0.0) || (scale[1] - res).abs() > 1e-12 * res {
        return Err(Error::UnsupportedTiff(format!("non-uniform pixel scale {:?}", &scale[..2])));
    }
    let left = tie[3] - tie[0] * res;
    let top = tie[4] + tie[1] * res;
    let origin = [
        (left / res).round() as i64,
        (top / res).round() as i64 - (tiles_y * TILE_SIZE) as i64,
    ];
    Ok(GeoTiffInfo {
        width,
        height,
        tiles_x,
        tiles_y,
        compression,
        predictor,
        resolution: res,
        origin,
        tile_offsets,
        tile_byte_counts,
    })
}

pub fn read_geotiff(path: &Path) -> Result<PriorMap> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut src = BufReader::new(f);
    let info = read_info(&mut src, path)?;
    let mut map = PriorMap::new(info.resolution, info.origin, info.tiles_x, info.tiles_y);
    for row in 0..info.tiles_y {
        for col in 0..info.tiles_x {
            if let Some(t) = info.decode_tile(&mut src, col, row, path)? {
                map.tiles.insert((col, row), Arc::new(t));
            }
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(seed: u64) -> PriorMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut map = PriorMap::new(0.33, [-512, 256], 3, 2);
        for key in [(0, 0), (2, 0), (1, 1)] {
            let t: Vec<u8> = (0..TILE_BYTES).map(|_| rng.gen()).collect();
            map.tiles.insert(key, Arc::new(t));
        }
        map
    }

    #[test]
    fn round_trip_zstd_and_deflate() {
        let dir = tempfile::tempdir().unwrap();
        let map = random_map(1);
        for c in [Compression::Zstd(3), Compression::Deflate(6)] {
            let p = dir.path().join("m.tif");
            write_geotiff_with(&map, &p, c).unwrap();
            let back = read_geotiff(&p).unwrap();
            assert_eq!(back, map);
            assert_eq!(back.resolution, 0.33);
        }
    }

    #[test]
    fn default_writer_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tif");
        let map = random_map(2);
        write_geotiff(&map, &p).unwrap();
        let mut f = File::open(&p).unwrap();
        let info = read_info(&mut f, &p).unwrap();
        assert_eq!(info.compression, COMPRESSION_ZSTD);
        assert_eq!(info.tile_byte_counts.iter().filter(|&&c| c == 0).count(), 3);
        assert_eq!(read_geotiff(&p).unwrap(), map);
    }

    fn patch_tag(bytes: &mut [u8], tag: u16, f: impl Fn(&mut [u8])) {
        let ifd = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let n = u16::from_le_bytes([bytes[ifd], bytes[ifd + 1]]) as usize;
        for k in 0..n {
            let e = ifd + 2 + 12 * k;
            if u16::from_le_bytes([bytes[e], bytes[e + 1]]) == tag {
                f(&mut bytes[e..e + 12]);
                return;
            }
        }
        panic!("tag {tag} not present");
    }

    #[test]
    fn lzw_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tif");
        let mut bytes = encode_geotiff(&random_map(3), Compression::Zstd(1)).unwrap();
        patch_tag(&mut bytes, TAG_COMPRESSION, |e| e[8..10].copy_from_slice(&5u16.to_le_bytes()));
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_geotiff(&p), Err(Error::UnsupportedCompression(5))));
    }

    #[test]
    fn missing_geo_tags_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tif");
        for tag in [TAG_PIXEL_SCALE, TAG_TIEPOINT, TAG_GEO_KEYS] {
            let mut bytes = encode_geotiff(&random_map(4), Compression::Zstd(1)).unwrap();
            // retag as a private tag the reader ignores
            patch_tag(&mut bytes, tag, |e| e[0..2].copy_from_slice(&65000u16.to_le_bytes()));
            std::fs::write(&p, &bytes).unwrap();
            assert!(matches!(read_geotiff(&p), Err(Error::NotGeoreferenced(_))), "tag {tag}");
        }
    }

    #[test]
    fn pixel_scale_and_georeference() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tif");
        let map = random_map(5);
        write_geotiff(&map, &p).unwrap();
        let mut f = File::open(&p).unwrap();
        let info = read_info(&mut f, &p).unwrap();
        assert_eq!(info.resolution, 0.33);
        assert_eq!(info.origin, [-512, 256]);
        assert_eq!((info.width, info.height), (768, 512));
    }

    #[test]
    fn non_tiff_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tif");
        std::fs::write(&p, b"hello world").unwrap();
        assert!(matches!(read_geotiff(&p), Err(Error::MalformedFile { .. })));
    }
}
