use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use rayon::prelude::*;

use bevloc_core::config::{ExtractorKind, RunConfig, Scenario, ENV_PREFIX};
use bevloc_core::evaluator::{
    evaluate_trajectory, matching_eval, spaced_frames, write_error_track, write_trajectory_plot, SUCCESS_ROTATION_DEG,
    SUCCESS_TRANSLATION,
};
use bevloc_core::geom::{load_trajectory, save_pointcloud_bin, save_trajectory, Trajectory, TrajectoryFormat};
use bevloc_core::map_store::{write_geotiff_with, TiledMapReader, TileSource};
use bevloc_core::pipeline::{
    bev_frames, build_map, frame_files, localize, ExecutionMode, FileSource, FrameDiag, FrameSource, MapFeatures,
};
use bevloc_core::synth::{generate_scene, road_loop_scenario, sample_path, simulate_drive};

/// Exit code for a violated acceptance threshold under `--assert`.
const THRESHOLD_EXIT: u8 = 2;

// thresholds checked by --assert
const MATCH_SUCCESS_PCT: f64 = 95.0;
const MATCH_MEAN_ERROR: f64 = 0.7;
const TRAJ_ATE: f64 = 0.5;
const TRAJ_ARE_DEG: f64 = 1.0;
const MAP_COMPRESSED_FRACTION: f64 = 0.35;

#[derive(Parser)]
#[command(name = "bevloc", version, about = "LiDAR BEV map building and map-based localization")]
#[command(after_help = "Any config key can be overridden from the environment as \
BEVLOC__<SECTION>__<KEY>=<value>, e.g. BEVLOC__MATCHER__R_MAX=15 or BEVLOC__SEED=7.")]
struct Cli {
    /// TOML run configuration; sensor defaults fill anything left out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Exit with code 2 when a result misses its acceptance threshold.
    #[arg(long = "assert", global = true)]
    assert_thresholds: bool,
    /// Run the localization stages one after another on the calling thread.
    #[arg(long, global = true)]
    single_thread: bool,
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a GeoTIFF prior map from clouds and ground-truth poses.
    MapCreate(MapCreateArgs),
    /// Localize a drive against a prior map.
    Localize(LocalizeArgs),
    /// Register distorted query BEVs against the map and report success rates.
    MatchEval(MatchEvalArgs),
    /// ATE / ARE of an estimated trajectory after planar alignment.
    EvalTraj(EvalTrajArgs),
    /// Generate a synthetic drive: clouds, ground truth and drifting odometry.
    SynthGen(SynthGenArgs),
}

#[derive(Args)]
struct TrajFormatArg {
    /// Trajectory file format: tum or kitti.
    #[arg(long, default_value = "tum")]
    format: TrajectoryFormat,
}

#[derive(Args)]
struct MapCreateArgs {
    /// Directory of `.bin` clouds.
    #[arg(long)]
    frames: Option<PathBuf>,
    /// Ground-truth sensor poses.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    /// Output GeoTIFF.
    #[arg(long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    fmt: TrajFormatArg,
}

#[derive(Args)]
struct LocalizeArgs {
    #[arg(long)]
    frames: Option<PathBuf>,
    #[arg(long)]
    odometry: Option<PathBuf>,
    #[arg(long)]
    map: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Ground truth; when given, the run is also evaluated.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Skip registration and emit the planar-projected odometry.
    #[arg(long)]
    no_registration: bool,
    #[command(flatten)]
    fmt: TrajFormatArg,
}

#[derive(Args)]
struct MatchEvalArgs {
    #[arg(long)]
    frames: Option<PathBuf>,
    /// Ground-truth poses of the query frames.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    #[arg(long)]
    map: Option<PathBuf>,
    /// Report file.
    #[arg(long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    fmt: TrajFormatArg,
}

#[derive(Args)]
struct EvalTrajArgs {
    #[arg(long)]
    estimate: Option<PathBuf>,
    /// Ground truth.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    /// Output directory for the report and plot data.
    #[arg(long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    fmt: TrajFormatArg,
}

#[derive(Args)]
struct SynthGenArgs {
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Session number; sessions share the scene but not sensor noise.
    #[arg(long, default_value_t = 0)]
    session: u64,
}

enum Verdict {
    Ok,
    Missed(String),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(Verdict::Ok) => ExitCode::SUCCESS,
        Ok(Verdict::Missed(why)) => {
            if cli.assert_thresholds {
                eprintln!("threshold violated: {why}");
                ExitCode::from(THRESHOLD_EXIT)
            } else {
                eprintln!("warning: {why}");
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::FAILURE
        }
    }
}

/// Error chain on one line, skipping causes the outer message already quotes.
fn describe(e: &anyhow::Error) -> String {
    let mut text = e.to_string();
    for cause in e.chain().skip(1) {
        let c = cause.to_string();
        if !text.contains(&c) {
            text = format!("{text}: {c}");
        }
    }
    text
}

fn run(cli: &Cli) -> Result<Verdict> {
    let mut cfg = RunConfig::load(cli.config.as_deref())
        .with_context(|| format!("loading configuration (env prefix {ENV_PREFIX})"))?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let mode = if cli.single_thread { ExecutionMode::Sequential } else { ExecutionMode::Pipelined };
    match &cli.command {
        Command::MapCreate(a) => map_create(&cfg, a),
        Command::Localize(a) => run_localize(&cfg, a, mode),
        Command::MatchEval(a) => match_eval(&cfg, a),
        Command::EvalTraj(a) => eval_traj(&cfg, a),
        Command::SynthGen(a) => synth_gen(&cfg, a),
    }
}

/// Flag value, else the configured path, else an error naming both.
fn need(flag: &Option<PathBuf>, configured: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| configured.clone())
        .with_context(|| format!("missing input: pass --{name} or set paths.{} in the config", name.replace('-', "_")))
}

fn frame_source(dir: &Path, traj: &Trajectory) -> Result<FileSource> {
    let files = frame_files(dir)?;
    if files.is_empty() {
        bail!("no .bin frames in {}", dir.display());
    }
    FileSource::new(files, traj).map_err(|e| match e {
        bevloc_core::Error::MissingFrames(list) => {
            let names: Vec<String> = list.iter().map(|p| p.display().to_string()).collect();
            anyhow::anyhow!("no pose within 0.05 s for {} frame(s):\n  {}", names.len(), names.join("\n  "))
        }
        other => other.into(),
    })
}

fn map_create(cfg: &RunConfig, a: &MapCreateArgs) -> Result<Verdict> {
    let frames = need(&a.frames, &cfg.paths.frames, "frames")?;
    let traj_path = need(&a.trajectory, &cfg.paths.trajectory, "trajectory")?;
    let out = need(&a.output, &cfg.paths.map, "output")?;
    let traj = load_trajectory(&traj_path, a.fmt.format)?;
    let source = frame_source(&frames, &traj)?;
    let t = Instant::now();
    let (map, stats) = build_map(&source, &cfg.segmenter, &cfg.normalization)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_geotiff_with(&map, &out, cfg.map.compression())?;
    let bytes = std::fs::metadata(&out)?.len() as f64;
    let mb = bytes / 1e6;
    let per_km2 = if stats.footprint_km2 > 0.0 { mb / stats.footprint_km2 } else { f64::NAN };
    let fraction = bytes / map.raw_size() as f64;
    println!("frames           {}", stats.frames);
    println!("distance_km      {:.3}", stats.distance_km);
    println!("footprint_km2    {:.5}", stats.footprint_km2);
    println!("file_mb          {mb:.3}");
    println!("mb_per_km2       {per_km2:.3}");
    println!("compressed_ratio {fraction:.4}");
    info!("map written to {} in {:.1} s", out.display(), t.elapsed().as_secs_f64());
    Ok(if fraction <= MAP_COMPRESSED_FRACTION {
        Verdict::Ok
    } else {
        Verdict::Missed(format!("compressed size is {:.1}% of raw", 100.0 * fraction))
    })
}

fn open_map(path: &Path, cfg: &RunConfig) -> Result<TiledMapReader> {
    let map = TiledMapReader::open(path)?;
    if (map.resolution() - cfg.segmenter.cell_size).abs() > 1e-9 {
        bail!(
            "map {} has {} m/px but the segmenter cell size is {} m",
            path.display(),
            map.resolution(),
            cfg.segmenter.cell_size
        );
    }
    Ok(map)
}

fn map_features<'a>(cfg: &RunConfig, map: &'a TiledMapReader) -> Result<MapFeatures<'a, TiledMapReader>> {
    Ok(match cfg.extractor {
        ExtractorKind::Sift => MapFeatures::sift(map, cfg.sift.clone()),
        ExtractorKind::External => {
            let p = cfg
                .paths
                .map_features
                .as_deref()
                .context("paths.map_features is required for the external extractor")?;
            MapFeatures::external(map, p)?
        }
    })
}

fn trajectory_report(est: &Trajectory, truth: &Trajectory, dir: &Path) -> Result<Verdict> {
    let (alignment, report) = evaluate_trajectory(est, truth)?;
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("trajectory_report.txt"), report.to_text())?;
    write_trajectory_plot(&dir.join("trajectory_plot.txt"), &alignment)?;
    write_error_track(&dir.join("error_track.txt"), &alignment)?;
    print!("{}", report.to_text());
    Ok(if report.ate <= TRAJ_ATE && report.are <= TRAJ_ARE_DEG {
        Verdict::Ok
    } else {
        Verdict::Missed(format!("ATE {:.3} m / ARE {:.3} deg above {TRAJ_ATE} m / {TRAJ_ARE_DEG} deg", report.ate, report.are))
    })
}

fn run_localize(cfg: &RunConfig, a: &LocalizeArgs, mode: ExecutionMode) -> Result<Verdict> {
    let frames = need(&a.frames, &cfg.paths.frames, "frames")?;
    let odo_path = need(&a.odometry, &cfg.paths.odometry, "odometry")?;
    let map_path = need(&a.map, &cfg.paths.map, "map")?;
    let out = need(&a.output, &cfg.paths.output, "output")?;
    let truth = match a.truth.as_ref().or(cfg.paths.trajectory.as_ref()) {
        Some(p) => Some(load_trajectory(p, a.fmt.format)?),
        None => None,
    };
    let odometry = load_trajectory(&odo_path, a.fmt.format)?;
    let source = frame_source(&frames, &odometry)?;
    let map = open_map(&map_path, cfg)?;
    let features = map_features(cfg, &map)?;
    let mut loc = cfg.localizer()?;
    if a.no_registration {
        loc.params.registration = false;
    }
    let initial = match &truth {
        Some(t) => t.poses().first().context("empty ground truth")?.planar(),
        None => source.poses[0].planar(),
    };
    let t = Instant::now();
    let output = localize(&source, &features, &loc, initial, mode)?;
    let secs = t.elapsed().as_secs_f64();
    std::fs::create_dir_all(&out)?;
    save_trajectory(&output.trajectory, out.join("trajectory.tum"), TrajectoryFormat::Tum)?;
    let mut diag = String::from(FrameDiag::HEADER);
    diag.push('\n');
    for d in &output.diagnostics {
        diag.push_str(&d.to_line());
        diag.push('\n');
    }
    std::fs::write(out.join("diagnostics.txt"), diag)?;
    let ok = output.diagnostics.iter().filter(|d| d.success).count();
    println!("frames           {}", source.len());
    println!("registered       {ok}");
    println!("frames_per_s     {:.2}", source.len() as f64 / secs);
    match truth {
        Some(t) => trajectory_report(&output.trajectory, &t, &out),
        None => Ok(Verdict::Ok),
    }
}

fn match_eval(cfg: &RunConfig, a: &MatchEvalArgs) -> Result<Verdict> {
    let frames = need(&a.frames, &cfg.paths.frames, "frames")?;
    let traj_path = need(&a.trajectory, &cfg.paths.trajectory, "trajectory")?;
    let map_path = need(&a.map, &cfg.paths.map, "map")?;
    let out = a
        .output
        .clone()
        .or_else(|| cfg.paths.output.as_ref().map(|d| d.join("match_eval.txt")))
        .context("missing output: pass --output or set paths.output")?;
    let traj = load_trajectory(&traj_path, a.fmt.format)?;
    let source = frame_source(&frames, &traj)?;
    let map = open_map(&map_path, cfg)?;

    // only the frames the evaluation will draw from are kept in memory
    let centres: Vec<[f64; 2]> = source.poses.iter().map(|p| [p.translation.x, p.translation.y]).collect();
    let pool = spaced_frames(&centres, cfg.match_eval.min_spacing);
    let n = cfg.match_eval.samples.max(1);
    let mut keep: Vec<usize> = (0..n).map(|k| pool[k * pool.len() / n]).collect();
    keep.dedup();
    let queries: Vec<_> = bev_frames(&source, &cfg.segmenter, &cfg.normalization, &keep)?
        .into_iter()
        .map(|(_, img, _)| img)
        .collect();
    let mut distortion = cfg.match_eval.clone();
    distortion.min_spacing = 0.0;
    let report = matching_eval(&map, &queries, &distortion, &cfg.matching_setup(), cfg.seed)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(&out, report.to_text())?;
    println!("samples               {}", report.samples.len());
    println!("success_rate_pct      {:.2}", report.success_rate);
    println!("mean_trans_err_m      {:.4}", report.mean_trans_err);
    println!("mean_rot_err_deg      {:.4}", report.mean_rot_err_deg);
    println!("success_gate          < {SUCCESS_TRANSLATION} m and < {SUCCESS_ROTATION_DEG} deg");
    Ok(if report.success_rate >= MATCH_SUCCESS_PCT && report.mean_trans_err <= MATCH_MEAN_ERROR {
        Verdict::Ok
    } else {
        Verdict::Missed(format!(
            "success {:.1}% (need {MATCH_SUCCESS_PCT}), mean error {:.3} m (need <= {MATCH_MEAN_ERROR})",
            report.success_rate, report.mean_trans_err
        ))
    })
}

fn eval_traj(cfg: &RunConfig, a: &EvalTrajArgs) -> Result<Verdict> {
    let est = need(&a.estimate, &cfg.paths.estimate, "estimate")?;
    let truth = need(&a.trajectory, &cfg.paths.trajectory, "trajectory")?;
    let out = need(&a.output, &cfg.paths.output, "output")?;
    let est = load_trajectory(&est, a.fmt.format)?;
    let truth = load_trajectory(&truth, a.fmt.format)?;
    trajectory_report(&est, &truth, &out)
}

fn synth_gen(cfg: &RunConfig, a: &SynthGenArgs) -> Result<Verdict> {
    let out = need(&a.output, &cfg.paths.output, "output")?;
    // the written config must work from any directory
    let out = std::path::absolute(&out)?;
    let s = &cfg.synth;
    let (spec, centreline) = match s.scenario {
        Scenario::RoadLoop => road_loop_scenario(cfg.seed),
    };
    let scene = generate_scene(&spec)?;
    let path = sample_path(&scene, &centreline, true, s.spacing, s.speed, s.length)?;
    let model = cfg.sensor_model()?;
    let drive_seed = cfg.seed ^ a.session.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let drive = simulate_drive(&scene, &path, &model, &s.drift, drive_seed)?;

    let frames_dir = out.join("frames");
    std::fs::create_dir_all(&frames_dir)?;
    let stamps = drive.truth.stamps();
    // bounded batches keep memory flat on long drives
    for chunk in (0..drive.len()).collect::<Vec<_>>().chunks(64) {
        chunk.par_iter().try_for_each(|&i| -> Result<()> {
            let cloud = drive.scan(&scene, i);
            save_pointcloud_bin(&cloud, frames_dir.join(format!("{:013.6}.bin", stamps[i])))?;
            Ok(())
        })?;
    }
    save_trajectory(&drive.truth, out.join("truth.tum"), TrajectoryFormat::Tum)?;
    save_trajectory(&drive.odometry, out.join("odometry.tum"), TrajectoryFormat::Tum)?;

    // ready-made config for the other subcommands
    let mut next = cfg.clone();
    next.paths.frames = Some(frames_dir);
    next.paths.trajectory = Some(out.join("truth.tum"));
    next.paths.odometry = Some(out.join("odometry.tum"));
    next.paths.map = Some(out.join("map.tif"));
    next.paths.output = Some(out.join("results"));
    next.paths.estimate = Some(out.join("results").join("trajectory.tum"));
    std::fs::write(out.join("config.toml"), next.to_toml())?;

    println!("frames      {}", drive.len());
    println!("output      {}", out.display());
    Ok(Verdict::Ok)
}
