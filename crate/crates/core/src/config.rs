//! Run configuration: one TOML file with a section per module, per-sensor
//! defaults, and environment overrides of the form
//! `BEVLOC__<SECTION>__<KEY>=<value>` (or `BEVLOC__<KEY>` for top-level keys).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bev::NormalizationFactors;
use crate::error::{Error, Result};
use crate::evaluator::{DistortionConfig, MatchingSetup};
use crate::features::SiftParams;
use crate::ground_grid::SegmenterConfig;
use crate::map_store::Compression;
use crate::matcher::MatcherConfig;
use crate::pipeline::{Extractor, LocalizeParams, LocalizerConfig};
use crate::pose_filter::FilterParams;
use crate::registrar::RegistrationParams;
use crate::synth::{DriftModel, SensorModel};

pub const ENV_PREFIX: &str = "BEVLOC__";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ExtractorKind {
    #[default]
    Sift,
    External,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory of `.bin` clouds.
    pub frames: Option<PathBuf>,
    /// Ground-truth poses (map building, trajectory evaluation).
    pub trajectory: Option<PathBuf>,
    pub odometry: Option<PathBuf>,
    pub map: Option<PathBuf>,
    /// Output directory.
    pub output: Option<PathBuf>,
    /// Estimated trajectory for evaluation.
    pub estimate: Option<PathBuf>,
    /// Per-frame external feature files.
    pub external_features: Option<PathBuf>,
    /// External feature file covering the whole map.
    pub map_features: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompressionKind {
    Zstd,
    Deflate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapParams {
    pub compression: CompressionKind,
    pub level: i32,
}

impl Default for MapParams {
    fn default() -> Self {
        Self { compression: CompressionKind::Zstd, level: 9 }
    }
}

impl MapParams {
    pub fn compression(&self) -> Compression {
        match self.compression {
            CompressionKind::Zstd => Compression::Zstd(self.level),
            CompressionKind::Deflate => Compression::Deflate(self.level.clamp(0, 9) as u32),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Single closed road loop of about 1 km.
    RoadLoop,
}

/// Synthetic dataset generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub scenario: Scenario,
    /// Driven distance (m), capped at the loop length.
    pub length: f64,
    /// Distance between frames (m).
    pub spacing: f64,
    /// m/s.
    pub speed: f64,
    pub drift: DriftModel,
    /// Overrides for the simulated sensor; defaults follow `sensor`.
    pub sensor_model: Option<SensorModel>,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            scenario: Scenario::RoadLoop,
            length: 500.0,
            spacing: 1.0,
            speed: 10.0,
            drift: DriftModel { yaw_rate_bias_deg_per_m: 0.02, scale_bias: 0.01 },
            sensor_model: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Sensor profile name (segmenter parameters and normalization factors).
    pub sensor: String,
    pub extractor: ExtractorKind,
    pub seed: u64,
    pub paths: Paths,
    pub segmenter: SegmenterConfig,
    pub normalization: NormalizationFactors,
    pub sift: SiftParams,
    pub matcher: MatcherConfig,
    pub registrar: RegistrationParams,
    pub filter: FilterParams,
    pub map: MapParams,
    pub localize: LocalizeParams,
    pub match_eval: DistortionConfig,
    pub synth: SynthParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_sensor("hdl64e", ExtractorKind::Sift).expect("built-in profile")
    }
}

impl RunConfig {
    /// Defaults for a sensor profile; the filter correction factor follows
    /// the extractor.
    pub fn for_sensor(sensor: &str, extractor: ExtractorKind) -> Result<Self> {
        let segmenter = SegmenterConfig::for_sensor(sensor)
            .ok_or_else(|| Error::Config(format!("unknown sensor profile {sensor:?}")))?;
        let normalization = NormalizationFactors::for_sensor(sensor)
            .ok_or_else(|| Error::Config(format!("unknown sensor profile {sensor:?}")))?;
        let f_i = match extractor {
            ExtractorKind::Sift => FilterParams::F_I_SIFT,
            ExtractorKind::External => FilterParams::F_I_EXTERNAL,
        };
        Ok(Self {
            sensor: sensor.to_string(),
            extractor,
            seed: 0,
            paths: Paths::default(),
            segmenter,
            normalization,
            sift: SiftParams::default(),
            matcher: MatcherConfig::default(),
            registrar: RegistrationParams::default(),
            filter: FilterParams { f_i, ..FilterParams::default() },
            map: MapParams::default(),
            localize: LocalizeParams::default(),
            match_eval: DistortionConfig::default(),
            synth: SynthParams::default(),
        })
    }

    /// Parses TOML text layered over the sensor defaults, with overrides
    /// from `env` (key, value) pairs applied last.
    pub fn from_toml_with_env<I>(text: &str, env: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut user: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        apply_env(&mut user, env)?;
        let sensor = match user.get("sensor") {
            Some(toml::Value::String(s)) => s.clone(),
            Some(_) => return Err(Error::Config("sensor must be a string".into())),
            None => "hdl64e".into(),
        };
        let extractor = match user.get("extractor") {
            Some(v) => v.clone().try_into::<ExtractorKind>().map_err(|e| Error::Config(format!("extractor: {e}")))?,
            None => ExtractorKind::Sift,
        };
        let base = Self::for_sensor(&sensor, extractor)?;
        let mut merged = toml::Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut merged, user);
        let cfg: RunConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with_env(text, std::iter::empty())
    }

    /// Loads `path` (or only defaults when `None`) with process
    /// environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Self::from_toml_with_env(&text, std::env::vars())
    }

    pub fn validate(&self) -> Result<()> {
        self.segmenter.validate()?;
        self.normalization.validate()?;
        self.matcher.validate()?;
        self.registrar.validate()?;
        self.filter.validate()?;
        if let Some(m) = &self.synth.sensor_model {
            m.validate()?;
        }
        if (self.segmenter.cell_size - crate::map_store::DEFAULT_RESOLUTION).abs() > 1e-12 {
            log::info!("map resolution follows segmenter.cell_size = {}", self.segmenter.cell_size);
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn sensor_model(&self) -> Result<SensorModel> {
        match &self.synth.sensor_model {
            Some(m) => Ok(m.clone()),
            None => SensorModel::profile(&self.sensor)
                .ok_or_else(|| Error::Config(format!("no sensor model for {:?}", self.sensor))),
        }
    }

    pub fn extractor(&self) -> Result<Extractor> {
        Ok(match self.extractor {
            ExtractorKind::Sift => Extractor::Sift(self.sift.clone()),
            ExtractorKind::External => Extractor::External(
                self.paths
                    .external_features
                    .clone()
                    .ok_or_else(|| Error::Config("paths.external_features is required for the external extractor".into()))?,
            ),
        })
    }

    pub fn localizer(&self) -> Result<LocalizerConfig> {
        Ok(LocalizerConfig {
            segmenter: self.segmenter.clone(),
            factors: self.normalization,
            extractor: self.extractor()?,
            matcher: self.matcher.clone(),
            registration: RegistrationParams { seed: self.registrar.seed ^ self.seed, ..self.registrar.clone() },
            filter: self.filter.clone(),
            params: self.localize.clone(),
        })
    }

    pub fn matching_setup(&self) -> MatchingSetup {
        MatchingSetup {
            sift: self.sift.clone(),
            matcher: self.matcher.clone(),
            registration: RegistrationParams { seed: self.registrar.seed ^ self.seed, ..self.registrar.clone() },
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Applies `BEVLOC__...` variables onto a parsed table.
pub fn apply_env<I>(table: &mut toml::Table, env: I) -> Result<()>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut vars: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    vars.sort();
    for (k, v) in vars {
        let path: Vec<String> = k[ENV_PREFIX.len()..].split("__").map(|s| s.to_ascii_lowercase()).collect();
        if path.iter().any(|s| s.is_empty()) {
            return Err(Error::Config(format!("malformed override {k}")));
        }
        let mut cur = &mut *table;
        for seg in &path[..path.len() - 1] {
            let entry = cur
                .entry(seg.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            cur = entry
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("override {k}: {seg} is not a section")))?;
        }
        cur.insert(path[path.len() - 1].clone(), parse_value(&v));
    }
    Ok(())
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_reference_values() {
        let c = RunConfig::default();
        assert_eq!(c.filter.gamma, 0.3);
        assert_eq!(c.filter.f_i, 25.0);
        assert_eq!(c.registrar.kappa, 1.39);
        assert_eq!(c.registrar.c_bar, 0.5);
        assert_eq!(c.normalization.intensity, 2.670);
        assert_eq!(c.segmenter.cell_size, 0.33);
    }

    #[test]
    fn external_extractor_changes_correction_factor() {
        let c = RunConfig::from_toml("extractor = \"external\"").unwrap();
        assert_eq!(c.filter.f_i, 15.0);
        let c = RunConfig::from_toml("extractor = \"external\"\n[filter]\nf_i = 20.0").unwrap();
        assert_eq!(c.filter.f_i, 20.0);
    }

    #[test]
    fn sensor_profile_selects_tables() {
        let c = RunConfig::from_toml("sensor = \"avia\"\n[segmenter]\nh_g = 0.4").unwrap();
        assert_eq!(c.normalization.intensity, 0.020);
        assert_eq!(c.segmenter.o_minc, 0.5);
        assert_eq!(c.segmenter.h_g, 0.4);
        assert!(RunConfig::from_toml("sensor = \"nope\"").is_err());
    }

    #[test]
    fn env_overrides_win() {
        let env = vec![
            ("BEVLOC__FILTER__GAMMA".to_string(), "0.5".to_string()),
            ("BEVLOC__SEED".to_string(), "42".to_string()),
            ("BEVLOC__PATHS__MAP".to_string(), "/tmp/m.tif".to_string()),
            ("UNRELATED".to_string(), "x".to_string()),
        ];
        let c = RunConfig::from_toml_with_env("seed = 1\n[filter]\ngamma = 0.2", env).unwrap();
        assert_eq!(c.filter.gamma, 0.5);
        assert_eq!(c.seed, 42);
        assert_eq!(c.paths.map.as_deref(), Some(Path::new("/tmp/m.tif")));
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_toml("[filter]\ngamma = 0.0").is_err());
        assert!(RunConfig::from_toml("[paths]\nbogus = \"x\"").is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }
}
