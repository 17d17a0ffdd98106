//! Pipeline configuration.
//!
//! A TOML file with one table per stage. Values resolve in this order, later
//! winning: built-in defaults, the file, the `STEREOFUSE_THREADS` environment
//! variable, command-line flags (`--set section.key=value`, `--threads`,
//! `--seed`, `--out`). Relative paths resolve against the config file's
//! directory. Optional numeric fields left out (or set to `"auto"`) are
//! derived from the data.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::camera::DEFAULT_BASELINE_FRACTION;
use crate::error::{Error, Result};
use crate::evaluation::EvalSettings;
use crate::segmentation::{DEFAULT_DILATION_RADIUS, DEFAULT_SEED_COUNT};
use crate::stereo::StereoParams;

pub const THREADS_ENV: &str = "STEREOFUSE_THREADS";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    /// Pretrained Gaussian-splat PLY.
    pub splat: Option<PathBuf>,
    /// Analytic scene description (TOML).
    pub analytic: Option<PathBuf>,
    pub cameras: PathBuf,
    /// Background color for splat renders.
    #[serde(default)]
    pub background: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigConfig {
    pub baseline_fraction: f64,
    /// Explicit baseline in world units; overrides the fraction.
    pub baseline: Option<f64>,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self { baseline_fraction: DEFAULT_BASELINE_FRACTION, baseline: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StereoConfig {
    /// Defaults to `ceil(fx / 2)` capped at 256.
    pub max_disparity: Option<u32>,
    pub p1: u32,
    pub p2: u32,
    pub num_paths: u8,
    pub lr_threshold: f64,
    pub uniqueness_ratio: f64,
}

impl Default for StereoConfig {
    fn default() -> Self {
        let d = StereoParams::default();
        Self {
            max_disparity: None,
            p1: d.p1,
            p2: d.p2,
            num_paths: d.num_paths,
            lr_threshold: d.lr_threshold,
            uniqueness_ratio: d.uniqueness_ratio,
        }
    }
}

impl StereoConfig {
    pub fn params(&self, fx: f64) -> StereoParams {
        StereoParams {
            max_disparity: self.max_disparity.unwrap_or_else(|| crate::stereo::default_max_disparity(fx)),
            p1: self.p1,
            p2: self.p2,
            num_paths: self.num_paths,
            lr_threshold: self.lr_threshold,
            uniqueness_ratio: self.uniqueness_ratio,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// Fixed voxel size; when absent it follows from `resolution`.
    pub voxel_size: Option<f64>,
    /// Lattice points along the longest axis of the padded volume.
    pub resolution: usize,
    /// Fixed truncation; when absent `max(4 voxels, depth error at 10B)`.
    pub truncation: Option<f64>,
    pub min_weight: f32,
    pub max_weight: f32,
    pub min_triangles: usize,
    /// Also write the TSDF volume next to the mesh.
    pub checkpoint: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            voxel_size: None,
            resolution: 128,
            truncation: None,
            min_weight: crate::fusion::DEFAULT_MIN_WEIGHT,
            max_weight: crate::fusion::tsdf::DEFAULT_MAX_WEIGHT,
            min_triangles: 100,
            checkpoint: false,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefinerKind {
    #[default]
    Identity,
    External,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationConfig {
    pub enabled: bool,
    /// Mask for the first frame (1-bit or grayscale PNG).
    pub initial_mask: Option<PathBuf>,
    /// Analytic scenes only: take the first-frame mask from this object id.
    pub object_id: Option<u32>,
    pub refiner: RefinerKind,
    /// Command for the external refiner; receives the exchange directory.
    pub command: Option<String>,
    pub dilation_radius: u32,
    pub seeds: usize,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            initial_mask: None,
            object_id: None,
            refiner: RefinerKind::Identity,
            command: None,
            dilation_radius: DEFAULT_DILATION_RADIUS,
            seeds: DEFAULT_SEED_COUNT,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Reference PLY (points or mesh). Analytic scenes fall back to the
    /// in-range oracle surface.
    pub ground_truth: Option<PathBuf>,
    /// Defaults to twice the voxel size.
    pub tau: Option<f64>,
    pub samples: usize,
    pub icp: bool,
    pub icp_max_iters: usize,
    pub icp_tol: f64,
    pub mm_per_unit: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        let d = EvalSettings::default();
        Self {
            ground_truth: None,
            tau: None,
            samples: d.samples,
            icp: d.icp,
            icp_max_iters: d.icp_max_iters,
            icp_tol: d.icp_tol,
            mm_per_unit: d.mm_per_unit,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// 0 uses every core.
    pub threads: usize,
    pub seed: u64,
    /// Run directory; relative paths resolve against the config file.
    pub output: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub scene: SceneConfig,
    #[serde(default)]
    pub rig: RigConfig,
    #[serde(default)]
    pub stereo: StereoConfig,
    #[serde(default)]
    pub fusion: FusionConfig,
    #[serde(default)]
    pub segmentation: SegmentationConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub run: RunConfig,
}

/// Command-line overrides, applied last.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub set: Vec<String>,
    pub threads: Option<usize>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
}

fn parse_value(raw: &str) -> toml::Value {
    // Anything that is not a TOML literal is taken as a bare string.
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_set(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--set expects key=value, got {assignment:?}")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, sections) = parts.split_last().ok_or_else(|| Error::Config("empty --set key".into()))?;
    let mut cur = table;
    for s in sections {
        cur = cur
            .entry(s.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{key}: {s} is not a table")))?;
    }
    let value = parse_value(raw.trim());
    if value.as_str() == Some("auto") {
        cur.remove(*last);
    } else {
        cur.insert(last.to_string(), value);
    }
    Ok(())
}

/// `"auto"` strings in the file mean "derive from data", same as omitting
/// the key.
fn strip_auto(table: &mut toml::Table) {
    table.retain(|_, v| v.as_str() != Some("auto"));
    for (_, v) in table.iter_mut() {
        if let Some(t) = v.as_table_mut() {
            strip_auto(t);
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str, base: &Path, overrides: &Overrides) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        strip_auto(&mut table);
        for s in &overrides.set {
            apply_set(&mut table, s)?;
        }
        let mut cfg: PipelineConfig =
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if let Ok(v) = std::env::var(THREADS_ENV) {
            cfg.run.threads = v.trim().parse().map_err(|_| Error::Config(format!("{THREADS_ENV}={v:?} is not a count")))?;
        }
        if let Some(t) = overrides.threads {
            cfg.run.threads = t;
        }
        if let Some(s) = overrides.seed {
            cfg.run.seed = s;
        }
        cfg.resolve_paths(base);
        if let Some(o) = &overrides.output {
            cfg.run.output = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base, overrides)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        self.scene.splat.as_mut().map(fix);
        self.scene.analytic.as_mut().map(fix);
        fix(&mut self.scene.cameras);
        self.segmentation.initial_mask.as_mut().map(fix);
        self.evaluation.ground_truth.as_mut().map(fix);
        if self.run.output.as_os_str().is_empty() {
            self.run.output = PathBuf::from("out");
        }
        fix(&mut self.run.output);
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match (&self.scene.splat, &self.scene.analytic) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => return bad("exactly one of scene.splat and scene.analytic must be set".into()),
        }
        if !(self.rig.baseline_fraction > 0.0 && self.rig.baseline_fraction <= 1.0) {
            return bad(format!("rig.baseline_fraction {} must be in (0, 1]", self.rig.baseline_fraction));
        }
        if let Some(b) = self.rig.baseline {
            if !(b > 0.0) {
                return bad("rig.baseline must be positive".into());
            }
        }
        self.stereo.params(100.0).validate().map_err(|e| Error::Config(format!("stereo: {e}")))?;
        if let Some(v) = self.fusion.voxel_size {
            if !(v > 0.0) {
                return bad("fusion.voxel_size must be positive".into());
            }
        }
        if let Some(t) = self.fusion.truncation {
            if !(t > 0.0) {
                return bad("fusion.truncation must be positive".into());
            }
        }
        if self.fusion.voxel_size.is_none() && self.fusion.resolution < 24 {
            return bad("fusion.resolution must be at least 24".into());
        }
        if !(self.fusion.max_weight >= 1.0 && self.fusion.min_weight >= 0.0) {
            return bad("fusion weights must satisfy max_weight >= 1, min_weight >= 0".into());
        }
        if self.segmentation.enabled {
            if self.segmentation.initial_mask.is_none() && self.segmentation.object_id.is_none() {
                return bad("segmentation needs initial_mask or object_id".into());
            }
            if self.segmentation.object_id.is_some() && self.scene.analytic.is_none() {
                return bad("segmentation.object_id needs an analytic scene".into());
            }
            if self.segmentation.refiner == RefinerKind::External && self.segmentation.command.is_none() {
                return bad("external refiner needs segmentation.command".into());
            }
            if self.segmentation.seeds == 0 {
                return bad("segmentation.seeds must be at least 1".into());
            }
        }
        if let Some(t) = self.evaluation.tau {
            if !(t > 0.0) {
                return bad("evaluation.tau must be positive".into());
            }
        }
        if self.evaluation.samples == 0 || !(self.evaluation.mm_per_unit > 0.0) {
            return bad("evaluation.samples and mm_per_unit must be positive".into());
        }
        Ok(())
    }

    /// Hash of everything that can change an artifact; thread count and
    /// output location are excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.run.threads = 0;
        c.run.output = PathBuf::new();
        hex_digest(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
