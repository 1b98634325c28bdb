//! End-to-end chains: map building and online localization, run either
//! sequentially or as a three-stage threaded pipeline with identical output.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::mpsc::sync_channel;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::bev::{render_bev, BevImage, NormalizationFactors, SlopeState};
use crate::error::{Error, Result};
use crate::features::{extract_sift, load_external_features, select_top_k, FeatureSet, FeatureSource, Keypoint, SiftParams};
use crate::geom::{load_pointcloud_bin, PointCloud, Pose2D, Pose3D, Trajectory};
use crate::ground_grid::{GroundGridMap, SegmenterConfig};
use crate::map_store::{crop_local, MapAccumulator, PriorMap, TileSource, TILE_SIZE};
use crate::matcher::{dynamic_radius, filter_by_radius, match_descriptors, update_hysteresis, MatchSet, MatcherConfig, MatcherState};
use crate::pose_filter::{FilterParams, FilterState};
use crate::registrar::{estimate_se2, RegistrationParams, RegistrationResult};
use crate::synth::{Drive, Scene};

/// One input sweep with the pose used to place it (ground truth for map
/// building, odometry for localization).
#[derive(Debug, Clone)]
pub struct Frame {
    pub stamp: f64,
    pub cloud: PointCloud,
    pub pose: Pose3D,
}

pub trait FrameSource: Sync {
    fn len(&self) -> usize;
    fn frame(&self, index: usize) -> Result<Frame>;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Simulated sweeps of a synthetic drive, placed by truth or odometry.
pub struct DriveSource<'a> {
    pub scene: &'a Scene,
    pub drive: &'a Drive,
    pub use_odometry: bool,
}

impl FrameSource for DriveSource<'_> {
    fn len(&self) -> usize {
        self.drive.len()
    }

    fn frame(&self, i: usize) -> Result<Frame> {
        let traj = if self.use_odometry { &self.drive.odometry } else { &self.drive.truth };
        Ok(Frame {
            stamp: traj.stamps()[i],
            cloud: self.drive.scan(self.scene, i),
            pose: traj.poses()[i],
        })
    }
}

/// `.bin` clouds on disk, each paired with the pose nearest in time.
pub struct FileSource {
    pub files: Vec<PathBuf>,
    pub stamps: Vec<f64>,
    pub poses: Vec<Pose3D>,
}

/// Frame stamps are taken from file stems when they parse as numbers,
/// otherwise from the trajectory in file order.
pub fn frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    files.sort();
    Ok(files)
}

impl FileSource {
    /// Pairs every file with a trajectory pose. Files are matched by the
    /// stamp in their stem (within 0.05 s) or by position when stems are
    /// not numeric and the counts agree.
    pub fn new(files: Vec<PathBuf>, traj: &Trajectory) -> Result<Self> {
        if files.is_empty() {
            return Err(Error::InsufficientData("no frames".into()));
        }
        let stem_stamps: Option<Vec<f64>> = files
            .iter()
            .map(|f| f.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<f64>().ok()))
            .collect();
        let mut stamps = Vec::new();
        let mut poses = Vec::new();
        let mut missing = Vec::new();
        match stem_stamps {
            Some(ss) if ss.windows(2).all(|w| w[1] > w[0]) => {
                for (f, s) in files.iter().zip(ss) {
                    match traj.nearest(s, 0.05) {
                        Some(j) => {
                            stamps.push(traj.stamps()[j]);
                            poses.push(traj.poses()[j]);
                        }
                        None => missing.push(f.clone()),
                    }
                }
            }
            _ => {
                if files.len() != traj.len() {
                    return Err(Error::InsufficientData(format!(
                        "{} frames but {} poses and file names carry no stamps",
                        files.len(),
                        traj.len()
                    )));
                }
                stamps = traj.stamps().to_vec();
                poses = traj.poses().to_vec();
            }
        }
        if !missing.is_empty() {
            return Err(Error::MissingFrames(missing));
        }
        Ok(Self { files, stamps, poses })
    }
}

impl FrameSource for FileSource {
    fn len(&self) -> usize {
        self.files.len()
    }

    fn frame(&self, i: usize) -> Result<Frame> {
        let mut cloud = load_pointcloud_bin(&self.files[i])?;
        cloud.stamp = self.stamps[i];
        Ok(Frame { stamp: self.stamps[i], cloud, pose: self.poses[i] })
    }
}

/// Ground grid plus slope memory; turns sweeps into BEV images in the frame
/// of the supplied poses.
pub struct BevStage {
    segmenter: SegmenterConfig,
    factors: NormalizationFactors,
    grid: Option<(GroundGridMap, SlopeState)>,
}

impl BevStage {
    pub fn new(segmenter: SegmenterConfig, factors: NormalizationFactors) -> Self {
        Self { segmenter, factors, grid: None }
    }

    pub fn process(&mut self, cloud: &PointCloud, pose: &Pose3D) -> Result<BevImage> {
        let xy = [pose.translation.x, pose.translation.y];
        let (grid, slope) = self.grid.get_or_insert_with(|| {
            let g = GroundGridMap::new(self.segmenter.clone(), xy);
            let s = SlopeState::new(g.size(), g.origin());
            (g, s)
        });
        grid.recenter(xy);
        slope.align_to(grid.origin());
        grid.integrate_scan(cloud, pose);
        let mut img = render_bev(&grid.snapshot(), &self.factors, slope)?;
        img.stamp = cloud.stamp;
        Ok(img)
    }
}

/// Per-frame feature extraction.
#[derive(Debug, Clone)]
pub enum Extractor {
    Sift(SiftParams),
    /// Pre-computed files `<dir>/<index:06>.feat`.
    External(PathBuf),
}

impl Extractor {
    pub fn extract(&self, img: &BevImage, index: usize) -> Result<FeatureSet> {
        match self {
            Extractor::Sift(p) => Ok(extract_sift(img, p)),
            Extractor::External(dir) => load_external_features(&dir.join(format!("{index:06}.feat")), img),
        }
    }
}

/// Rewrites a feature set into global raster coordinates (origin 0),
/// optionally moving every keypoint through `transform` first.
pub fn to_global(fs: &FeatureSet, transform: Option<&Pose2D>) -> FeatureSet {
    let res = fs.resolution;
    let mut out = FeatureSet::empty(fs.source, [0, 0], res);
    for i in 0..fs.len() {
        let mut w = fs.world_position(i);
        let mut k = fs.keypoints[i];
        if let Some(t) = transform {
            w = t.apply(w);
            k.orientation += t.yaw;
        }
        k.u = w[0] / res - 0.5;
        k.v = w[1] / res - 0.5;
        out.push(k, fs.descriptors[i]);
    }
    out
}

/// Map keypoints, extracted lazily one tile at a time (with a margin so
/// keypoints near tile seams see their full support).
pub struct MapFeatures<'a, S: TileSource + ?Sized> {
    map: &'a S,
    source: MapFeatureSource,
    cache: Mutex<HashMap<(usize, usize), Arc<FeatureSet>>>,
}

enum MapFeatureSource {
    Sift(SiftParams),
    Preloaded(FeatureSet),
}

/// Pixels of context around each tile for map-side extraction.
pub const TILE_MARGIN: usize = 48;

impl<'a, S: TileSource + ?Sized> MapFeatures<'a, S> {
    pub fn sift(map: &'a S, params: SiftParams) -> Self {
        Self { map, source: MapFeatureSource::Sift(params), cache: Mutex::new(HashMap::new()) }
    }

    /// Externally extracted map features; positions relative to the map origin.
    pub fn external(map: &'a S, path: &Path) -> Result<Self> {
        let shell = BevImage::empty(0, 0, map.resolution(), map.origin());
        let fs = to_global(&load_external_features(path, &shell)?, None);
        Ok(Self { map, source: MapFeatureSource::Preloaded(fs), cache: Mutex::new(HashMap::new()) })
    }

    pub fn resolution(&self) -> f64 {
        self.map.resolution()
    }

    fn tile_features(&self, col: usize, row: usize, params: &SiftParams) -> Arc<FeatureSet> {
        if let Some(f) = self.cache.lock().unwrap().get(&(col, row)) {
            return f.clone();
        }
        let o = self.map.origin();
        let t = TILE_SIZE as i64;
        let m = TILE_MARGIN as i64;
        let res = self.map.resolution();
        let size = TILE_SIZE + 2 * TILE_MARGIN;
        // crop_local centres on the cell containing the pose
        let center_cell = [o[0] + col as i64 * t - m + (size / 2) as i64, o[1] + row as i64 * t - m + (size / 2) as i64];
        let center = Pose2D::new((center_cell[0] as f64 + 0.5) * res, (center_cell[1] as f64 + 0.5) * res, 0.0);
        let img = crop_local(self.map, &center, size);
        let fs = if img.valid_count() == 0 {
            FeatureSet::empty(FeatureSource::BuiltinSift, img.origin, res)
        } else {
            extract_sift(&img, params)
        };
        let g = to_global(&fs, None);
        let (x0, y0) = ((o[0] + col as i64 * t) as f64, (o[1] + row as i64 * t) as f64);
        let keep: Vec<usize> = (0..g.len())
            .filter(|&i| {
                let k = &g.keypoints[i];
                let (u, v) = ((k.u + 0.5).floor(), (k.v + 0.5).floor());
                u >= x0 && u < x0 + t as f64 && v >= y0 && v < y0 + t as f64
            })
            .collect();
        let f = Arc::new(g.select(&keep));
        self.cache.lock().unwrap().insert((col, row), f.clone());
        f
    }

    /// All map keypoints inside the axis-aligned square of half side
    /// `half` metres around `center`, in global raster coordinates.
    pub fn window(&self, center: [f64; 2], half: f64) -> FeatureSet {
        let res = self.map.resolution();
        let (lo, hi) = ([center[0] - half, center[1] - half], [center[0] + half, center[1] + half]);
        let inside = |k: &Keypoint| {
            let (x, y) = ((k.u + 0.5) * res, (k.v + 0.5) * res);
            x >= lo[0] && x < hi[0] && y >= lo[1] && y < hi[1]
        };
        match &self.source {
            MapFeatureSource::Preloaded(fs) => {
                let keep: Vec<usize> = (0..fs.len()).filter(|&i| inside(&fs.keypoints[i])).collect();
                fs.select(&keep)
            }
            MapFeatureSource::Sift(params) => {
                let mut out = FeatureSet::empty(FeatureSource::BuiltinSift, [0, 0], res);
                let o = self.map.origin();
                let (tw, th) = self.map.tile_grid();
                let t = TILE_SIZE as i64;
                let tile_of = |w: f64, o: i64| ((w / res).floor() as i64 - o).div_euclid(t);
                let (c0, c1) = (tile_of(lo[0], o[0]).max(0), tile_of(hi[0], o[0]).min(tw as i64 - 1));
                let (r0, r1) = (tile_of(lo[1], o[1]).max(0), tile_of(hi[1], o[1]).min(th as i64 - 1));
                for row in r0..=r1 {
                    for col in c0..=c1 {
                        if self.map.tile(col as usize, row as usize).is_none() {
                            continue;
                        }
                        let f = self.tile_features(col as usize, row as usize, params);
                        for i in 0..f.len() {
                            if inside(&f.keypoints[i]) {
                                out.push(f.keypoints[i], f.descriptors[i]);
                            }
                        }
                    }
                }
                out
            }
        }
    }
}

/// Matches `query` against `map` (both global raster coordinates), keeps
/// pairs within `radius` metres and registers the survivors.
pub fn match_and_register(
    query: &FeatureSet,
    map: &FeatureSet,
    radius: f64,
    max_feature_distance: f64,
    matcher: &MatcherConfig,
    registration: &RegistrationParams,
) -> (MatchSet, RegistrationResult) {
    let all = match_descriptors(query, map, max_feature_distance, matcher);
    let res = map.resolution;
    let kept = if radius.is_finite() { filter_by_radius(&all, radius, res) } else { all };
    let reg = estimate_se2(&kept, registration);
    (kept, reg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalizeParams {
    /// When false, output is the planar-projected odometry.
    pub registration: bool,
    /// Extra map margin (m) beyond the BEV half extent.
    pub window_margin: f64,
    /// Queue depth between pipeline stages.
    pub queue_depth: usize,
}

impl Default for LocalizeParams {
    fn default() -> Self {
        Self { registration: true, window_margin: 5.0, queue_depth: 4 }
    }
}

/// Per-frame diagnostics record.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDiag {
    pub index: usize,
    pub stamp: f64,
    pub keypoints: usize,
    pub map_keypoints: usize,
    pub matches: usize,
    pub inliers: usize,
    pub radius: f64,
    pub success: bool,
    /// Applied (x, y, yaw) correction.
    pub applied: [f64; 3],
    pub pose: Pose2D,
}

impl FrameDiag {
    pub const HEADER: &'static str =
        "# index stamp keypoints map_keypoints matches inliers radius success dx dy dyaw x y yaw";

    pub fn to_line(&self) -> String {
        format!(
            "{} {:.6} {} {} {} {} {:.3} {} {:.6} {:.6} {:.8} {:.6} {:.6} {:.8}",
            self.index,
            self.stamp,
            self.keypoints,
            self.map_keypoints,
            self.matches,
            self.inliers,
            self.radius,
            u8::from(self.success),
            self.applied[0],
            self.applied[1],
            self.applied[2],
            self.pose.x,
            self.pose.y,
            self.pose.yaw
        )
    }
}

/// Everything the localization loop needs besides the frames.
#[derive(Debug, Clone)]
pub struct LocalizerConfig {
    pub segmenter: SegmenterConfig,
    pub factors: NormalizationFactors,
    pub extractor: Extractor,
    pub matcher: MatcherConfig,
    pub registration: RegistrationParams,
    pub filter: FilterParams,
    pub params: LocalizeParams,
}

/// Matching, registration and filtering (the last, sequential stage).
pub struct Localizer<'m, 'a, S: TileSource + ?Sized> {
    map: &'m MapFeatures<'a, S>,
    filter: FilterState,
    matcher: MatcherState,
    registration: RegistrationParams,
    params: LocalizeParams,
    window_half: f64,
}

impl<'m, 'a, S: TileSource + ?Sized> Localizer<'m, 'a, S> {
    pub fn new(map: &'m MapFeatures<'a, S>, cfg: &LocalizerConfig, initial: Pose2D) -> Self {
        let grid_half = cfg.segmenter.grid_size as f64 * cfg.segmenter.cell_size / 2.0;
        Self {
            map,
            filter: FilterState::new(cfg.filter.clone(), initial),
            matcher: MatcherState::new(cfg.matcher.clone()),
            registration: cfg.registration.clone(),
            params: cfg.params.clone(),
            window_half: grid_half + cfg.params.window_margin,
        }
    }

    pub fn step(&mut self, index: usize, stamp: f64, odom: &Pose3D, features: &FeatureSet) -> Result<FrameDiag> {
        let pred = self.filter.predict(stamp, odom)?;
        let mut diag = FrameDiag {
            index,
            stamp,
            keypoints: features.len(),
            map_keypoints: 0,
            matches: 0,
            inliers: 0,
            radius: 0.0,
            success: false,
            applied: [0.0; 3],
            pose: pred,
        };
        if !self.params.registration {
            return Ok(diag);
        }
        // BEV lives in the odometry frame; move it to the predicted map pose
        let map_from_odom = pred.compose(&odom.planar().inverse());
        let query = to_global(&select_top_k(features, self.matcher.max_keypoints), Some(&map_from_odom));
        let map = self.map.window([pred.x, pred.y], self.window_half);
        let radius = dynamic_radius(&self.matcher);
        let mut reg_params = self.registration.clone();
        reg_params.seed = self.registration.seed ^ index as u64;
        let (matches, reg) = match_and_register(
            &query,
            &map,
            radius,
            self.matcher.max_feature_distance,
            &self.matcher.config,
            &reg_params,
        );
        if reg.success {
            let moved = reg.transform.apply([pred.x, pred.y]);
            self.matcher.record_offset((moved[0] - pred.x).hypot(moved[1] - pred.y));
        }
        diag.applied = self.filter.correct(&reg);
        self.matcher = update_hysteresis(&self.matcher, matches.len());
        diag.map_keypoints = map.len();
        diag.matches = matches.len();
        diag.inliers = reg.inliers.len();
        diag.radius = radius;
        diag.success = reg.success;
        diag.pose = self.filter.corrected;
        Ok(diag)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecutionMode {
    Sequential,
    Pipelined,
}

/// Output of a localization run: corrected poses (z from odometry) and one
/// diagnostics record per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationOutput {
    pub trajectory: Trajectory,
    pub diagnostics: Vec<FrameDiag>,
}

pub fn localize<S: TileSource + Sync + ?Sized>(
    source: &dyn FrameSource,
    map: &MapFeatures<'_, S>,
    cfg: &LocalizerConfig,
    initial: Pose2D,
    mode: ExecutionMode,
) -> Result<LocalizationOutput> {
    let n = source.len();
    if n == 0 {
        return Err(Error::InsufficientData("no frames".into()));
    }
    let res = map.map.resolution();
    if (res - cfg.segmenter.cell_size).abs() > 1e-9 {
        return Err(Error::ResolutionMismatch { expected: cfg.segmenter.cell_size, actual: res });
    }
    let mut loc = Localizer::new(map, cfg, initial);
    let mut traj = Trajectory::new();
    let mut diags = Vec::with_capacity(n);
    let mut finish = |i: usize, stamp: f64, pose: &Pose3D, fs: &FeatureSet| -> Result<()> {
        let d = loc.step(i, stamp, pose, fs)?;
        traj.push(stamp, Pose3D::from_planar(&d.pose, pose.translation.z))?;
        diags.push(d);
        Ok(())
    };
    match mode {
        ExecutionMode::Sequential => {
            let mut bev = BevStage::new(cfg.segmenter.clone(), cfg.factors);
            for i in 0..n {
                let f = source.frame(i)?;
                let img = bev.process(&f.cloud, &f.pose)?;
                let fs = cfg.extractor.extract(&img, i)?;
                finish(i, f.stamp, &f.pose, &fs)?;
            }
        }
        ExecutionMode::Pipelined => {
            let depth = cfg.params.queue_depth.max(1);
            std::thread::scope(|s| -> Result<()> {
                let (tx_a, rx_a) = sync_channel::<Result<(usize, f64, Pose3D, BevImage)>>(depth);
                let (tx_b, rx_b) = sync_channel::<Result<(usize, f64, Pose3D, FeatureSet)>>(depth);
                let seg = cfg.segmenter.clone();
                let factors = cfg.factors;
                s.spawn(move || {
                    let mut bev = BevStage::new(seg, factors);
                    for i in 0..n {
                        let r = source.frame(i).and_then(|f| {
                            let img = bev.process(&f.cloud, &f.pose)?;
                            Ok((i, f.stamp, f.pose, img))
                        });
                        let stop = r.is_err();
                        if tx_a.send(r).is_err() || stop {
                            return;
                        }
                    }
                });
                let extractor = &cfg.extractor;
                s.spawn(move || {
                    for r in rx_a {
                        let r = r.and_then(|(i, stamp, pose, img)| Ok((i, stamp, pose, extractor.extract(&img, i)?)));
                        let stop = r.is_err();
                        if tx_b.send(r).is_err() || stop {
                            return;
                        }
                    }
                });
                for r in rx_b {
                    let (i, stamp, pose, fs) = r?;
                    finish(i, stamp, &pose, &fs)?;
                }
                Ok(())
            })?;
            if diags.len() != n {
                return Err(Error::InsufficientData(format!("pipeline produced {} of {n} frames", diags.len())));
            }
        }
    }
    Ok(LocalizationOutput { trajectory: traj, diagnostics: diags })
}

/// Map-building statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapStats {
    pub frames: usize,
    /// Area of valid pixels, km².
    pub footprint_km2: f64,
    /// Driven distance along the poses, km.
    pub distance_km: f64,
}

/// Rasterizes every frame at its (ground-truth) pose and fuses the BEV
/// images into a prior map.
pub fn build_map(source: &dyn FrameSource, segmenter: &SegmenterConfig, factors: &NormalizationFactors) -> Result<(PriorMap, MapStats)> {
    build_map_keeping(source, segmenter, factors, &[]).map(|(m, s, _)| (m, s))
}

/// Frame index, its BEV image and the pose it was placed at.
pub type KeptFrame = (usize, BevImage, Pose3D);

/// [`build_map`] that also returns the BEV images of the frames in `keep`,
/// as rendered during the same pass.
pub fn build_map_keeping(
    source: &dyn FrameSource,
    segmenter: &SegmenterConfig,
    factors: &NormalizationFactors,
    keep: &[usize],
) -> Result<(PriorMap, MapStats, Vec<KeptFrame>)> {
    let n = source.len();
    if n == 0 {
        return Err(Error::InsufficientData("no frames".into()));
    }
    let mut stage = BevStage::new(segmenter.clone(), *factors);
    let mut acc = MapAccumulator::new(segmenter.cell_size);
    let mut distance = 0.0;
    let mut last: Option<nalgebra::Vector3<f64>> = None;
    let mut kept = Vec::with_capacity(keep.len());
    for i in 0..n {
        let f = source.frame(i)?;
        let img = stage.process(&f.cloud, &f.pose)?;
        acc.accumulate(&img, &Pose2D::identity())?;
        if let Some(l) = last {
            distance += (f.pose.translation - l).norm();
        }
        last = Some(f.pose.translation);
        if keep.contains(&i) {
            kept.push((i, img, f.pose));
        }
    }
    let map = acc.finalize()?;
    let valid: usize = map.tiles.values().map(|t| t.chunks(3).filter(|p| *p != [0, 0, 0]).count()).sum();
    let px_area = map.resolution * map.resolution;
    Ok((
        map,
        MapStats { frames: n, footprint_km2: valid as f64 * px_area / 1e6, distance_km: distance / 1000.0 },
        kept,
    ))
}

/// BEV images at selected frames of a source, each rasterized by running
/// the grid over all frames up to it. Used to build matching-eval queries.
pub fn bev_frames(source: &dyn FrameSource, segmenter: &SegmenterConfig, factors: &NormalizationFactors, keep: &[usize]) -> Result<Vec<KeptFrame>> {
    let mut stage = BevStage::new(segmenter.clone(), *factors);
    let mut out = Vec::with_capacity(keep.len());
    let last = keep.iter().copied().max().map_or(0, |m| m + 1);
    for i in 0..last.min(source.len()) {
        let f = source.frame(i)?;
        let img = stage.process(&f.cloud, &f.pose)?;
        if keep.contains(&i) {
            out.push((i, img, f.pose));
        }
    }
    Ok(out)
}
