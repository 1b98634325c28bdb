//! File-backed map access with a bounded tile cache.

use std::fs::File;
use std::io::BufReader;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use lru::LruCache;

use super::geotiff::{read_info, GeoTiffInfo};
use super::{PriorMap, TileSource};
use crate::error::{Error, Result};

pub const DEFAULT_CACHE_TILES: usize = 64;

struct Inner {
    file: BufReader<File>,
    cache: LruCache<(usize, usize), Option<Arc<Vec<u8>>>>,
    hits: u64,
    misses: u64,
}

/// Reads tiles on demand, keeping the most recently used ones decoded.
/// Safe to share between threads.
pub struct TiledMapReader {
    path: PathBuf,
    info: GeoTiffInfo,
    inner: Mutex<Inner>,
}

impl TiledMapReader {
    pub fn open(path: &Path) -> Result<Self> {
        Self::with_capacity(path, DEFAULT_CACHE_TILES)
    }

    pub fn with_capacity(path: &Path, tiles: usize) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut file = BufReader::new(f);
        let info = read_info(&mut file, path)?;
        let cap = NonZeroUsize::new(tiles.max(1)).unwrap();
        Ok(Self {
            path: path.to_path_buf(),
            info,
            inner: Mutex::new(Inner {
                file,
                cache: LruCache::new(cap),
                hits: 0,
                misses: 0,
            }),
        })
    }

    pub fn info(&self) -> &GeoTiffInfo {
        &self.info
    }

    /// (hits, misses) of the tile cache so far.
    pub fn cache_stats(&self) -> (u64, u64) {
        let g = self.inner.lock().unwrap();
        (g.hits, g.misses)
    }

    pub fn cached_tiles(&self) -> usize {
        self.inner.lock().unwrap().cache.len()
    }

    fn fetch(&self, col: usize, row: usize) -> Result<Option<Arc<Vec<u8>>>> {
        if col >= self.info.tiles_x || row >= self.info.tiles_y {
            return Ok(None);
        }
        let mut g = self.inner.lock().unwrap();
        if let Some(t) = g.cache.get(&(col, row)) {
            let t = t.clone();
            g.hits += 1;
            return Ok(t);
        }
        g.misses += 1;
        let tile = self
            .info
            .decode_tile(&mut g.file, col, row, &self.path)?
            .map(Arc::new);
        g.cache.put((col, row), tile.clone());
        Ok(tile)
    }

    /// Decodes every tile into an in-memory map.
    pub fn load_all(&self) -> Result<PriorMap> {
        let mut map = PriorMap::new(self.info.resolution, self.info.origin, self.info.tiles_x, self.info.tiles_y);
        for row in 0..self.info.tiles_y {
            for col in 0..self.info.tiles_x {
                if let Some(t) = self.fetch(col, row)? {
                    map.tiles.insert((col, row), t);
                }
            }
        }
        Ok(map)
    }
}

impl TileSource for TiledMapReader {
    fn resolution(&self) -> f64 {
        self.info.resolution
    }

    fn origin(&self) -> [i64; 2] {
        self.info.origin
    }

    fn tile_grid(&self) -> (usize, usize) {
        (self.info.tiles_x, self.info.tiles_y)
    }

    fn tile(&self, col: usize, row: usize) -> Option<Arc<Vec<u8>>> {
        match self.fetch(col, row) {
            Ok(t) => t,
            Err(e) => {
                log::error!("map tile ({col}, {row}) unreadable: {e}");
                None
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Pose2D;
    use crate::map_store::{crop_local, write_geotiff, TILE_SIZE};

    fn striped_map() -> PriorMap {
        let mut map = PriorMap::new(0.33, [0, 0], 10, 10);
        for r in 0..10 {
            for c in 0..10 {
                let t = vec![(1 + r * 10 + c) as u8; TILE_SIZE * TILE_SIZE * 3];
                map.tiles.insert((c, r), Arc::new(t));
            }
        }
        map
    }

    #[test]
    fn cache_is_bounded_and_consistent() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tif");
        let map = striped_map();
        write_geotiff(&map, &p).unwrap();
        let r = TiledMapReader::open(&p).unwrap();
        assert_eq!(r.load_all().unwrap(), map);
        assert!(r.cached_tiles() <= DEFAULT_CACHE_TILES);
        let c = Pose2D::new(300.0, 500.0, 0.0);
        assert_eq!(crop_local(&r, &c, 192), crop_local(&map, &c, 192));
        let (h0, _) = r.cache_stats();
        crop_local(&r, &c, 192);
        assert!(r.cache_stats().0 > h0);
    }

    #[test]
    fn concurrent_crops() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tif");
        let map = striped_map();
        write_geotiff(&map, &p).unwrap();
        let r = TiledMapReader::with_capacity(&p, 4).unwrap();
        std::thread::scope(|s| {
            for k in 0..4 {
                let (r, map) = (&r, &map);
                s.spawn(move || {
                    for j in 0..20 {
                        let c = Pose2D::new(40.0 * ((k + j) % 20) as f64, 37.0 * j as f64, 0.0);
                        assert_eq!(crop_local(r, &c, 100), crop_local(map, &c, 100));
                    }
                });
            }
        });
        assert!(r.cached_tiles() <= 4);
    }
}
