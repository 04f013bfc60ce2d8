use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcl::FilterConfig;
use crate::polar::PolarGridSpec;
use crate::semantic_map::{class_index, ClassSet, DEFAULT_TRUNC_RADIUS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScanFormat {
    #[default]
    Portable,
    Semantickitti,
}

/// Keyframing and prior emission for the georeferencing graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphConfig {
    /// A node is added once the robot has moved this far since the last one.
    pub keyframe_distance_m: f64,
    /// Scales the heading information of prior factors; 0 constrains position
    /// only.
    pub heading_weight: f64,
    /// Eigenvalue floor applied to covariances before they are inverted.
    pub information_floor: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            keyframe_distance_m: 1.0,
            heading_weight: 1.0,
            information_floor: 1e-6,
            max_iters: 50,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct OutputPaths {
    pub result_log: Option<PathBuf>,
    pub trajectory: Option<PathBuf>,
    pub summary: Option<PathBuf>,
}

/// Everything `localize` needs. Relative paths are taken relative to the
/// directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Map raster; its JSON sidecar sits next to it.
    pub map: PathBuf,
    pub scans: PathBuf,
    #[serde(default)]
    pub scan_format: ScanFormat,
    pub odometry: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<PathBuf>,
    /// Distance-field cache; built and written here when missing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tdf_cache: Option<PathBuf>,
    #[serde(default)]
    pub outputs: OutputPaths,
    #[serde(default = "default_trunc")]
    pub trunc_radius: f32,
    /// Frame rate used to stamp SemanticKITTI frames.
    #[serde(default = "default_rate")]
    pub frame_rate_hz: f64,
    /// Raw label → class name (or null to drop), applied over the format's
    /// default table.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub class_remap: BTreeMap<u32, Option<String>>,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub grid: PolarGridSpec,
    #[serde(default)]
    pub graph: GraphConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_trunc() -> f32 {
    DEFAULT_TRUNC_RADIUS
}

fn default_rate() -> f64 {
    10.0
}

impl RunConfig {
    /// A config with default tuning for the given inputs.
    pub fn new(map: impl Into<PathBuf>, scans: impl Into<PathBuf>, odometry: impl Into<PathBuf>) -> Self {
        RunConfig {
            map: map.into(),
            scans: scans.into(),
            scan_format: ScanFormat::Portable,
            odometry: odometry.into(),
            ground_truth: None,
            tdf_cache: None,
            outputs: OutputPaths::default(),
            trunc_radius: DEFAULT_TRUNC_RADIUS,
            frame_rate_hz: default_rate(),
            class_remap: BTreeMap::new(),
            filter: FilterConfig::default(),
            grid: PolarGridSpec::default(),
            graph: GraphConfig::default(),
            base_dir: PathBuf::new(),
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn class_set(&self) -> Result<ClassSet> {
        let mut cs = match self.scan_format {
            ScanFormat::Portable => ClassSet::portable(),
            ScanFormat::Semantickitti => ClassSet::semantic_kitti(),
        };
        for (raw, name) in &self.class_remap {
            let target = match name {
                None => None,
                Some(n) => Some(
                    class_index(n).ok_or_else(|| Error::Config(format!("class_remap.{raw}: unknown class {n:?}")))?,
                ),
            };
            cs.remap.insert(*raw, target);
        }
        Ok(cs)
    }

    pub fn validate(&self) -> Result<()> {
        self.filter.validate()?;
        self.grid.validate()?;
        if !(self.trunc_radius > 0.0) {
            return Err(Error::Config(format!("trunc_radius must be positive, got {}", self.trunc_radius)));
        }
        if !(self.frame_rate_hz > 0.0) {
            return Err(Error::Config(format!("frame_rate_hz must be positive, got {}", self.frame_rate_hz)));
        }
        if !(self.graph.keyframe_distance_m >= 0.0) || !(self.graph.heading_weight >= 0.0) {
            return Err(Error::Config("graph.keyframe_distance_m and graph.heading_weight must be non-negative".into()));
        }
        let cs = self.class_set()?;
        if self.filter.alpha.len() != cs.n_classes() {
            return Err(Error::Config(format!(
                "filter.alpha has {} entries for {} classes",
                self.filter.alpha.len(),
                cs.n_classes()
            )));
        }
        Ok(())
    }

    /// Canonical JSON text; `load_config` of this text gives back `self`.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

pub fn parse_config(text: &str, base_dir: &Path, context: &str) -> Result<RunConfig> {
    let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("{context}: {e}")))?;
    cfg.base_dir = base_dir.to_path_buf();
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config(&text, &base, &path.display().to_string())
}

pub fn save_config(path: &Path, cfg: &RunConfig) -> Result<()> {
    std::fs::write(path, cfg.to_json()).map_err(|e| Error::io(path, e))
}
