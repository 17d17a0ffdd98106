//! Stage orchestration. Every stage reads its inputs from and writes its
//! outputs to the run directory, so stages can be run one at a time, resumed,
//! or inspected with external tools.
//!
//! Layout under the output directory:
//!
//! ```text
//! render/   cameras.txt  rig.txt  {id}_left.png  {id}_right.png
//!           {id}_depth.pfm  {id}_ids.pfm            (analytic scenes only)
//! match/    {id}_disp.pfm  {id}_depth.pfm  {id}_valid.png
//!           {id}_occlusion.png  {id}_range.png  {id}.meta
//! segment/  {id}_mask.png  {id}_seeds.txt  track.txt  refiner/
//! fuse/     mesh.ply  volume.json  [tsdf.txt tsdf.bin]
//! eval/     report.json  [gt.ply]
//! manifest.json
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{baseline_from_radius, read_camera_file, scene_radius, write_camera_file, Frame, Pose};
use crate::config::{hex_digest, PipelineConfig, RefinerKind};
use crate::error::{Error, Result};
use crate::evaluation::{
    evaluate_mesh, observable_surface, read_ground_truth, write_point_cloud_ply, write_report,
    EvalSettings, PointCloud,
};
use crate::fusion::{
    auto_truncation, clean_mesh, depth_bounds, extract_mesh, read_mesh_ply, voxel_for_resolution, write_mesh_ply,
    TsdfVolume,
};
use crate::raster::{read_mask_png, read_pfm, read_rgb_png, write_mask_png, write_pfm, write_rgb_png, Grid, Mask};
use crate::render::{load_gaussian_ply, render_analytic, render_splats, AnalyticScene, GaussianCloud, RenderedFrame};
use crate::segmentation::{track_object, ExternalRefiner, IdentityRefiner, Refiner, TrackInput};
use crate::stereo::{depth_range_mask, stereo_depth, DepthFrame, DisparityMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Render,
    Match,
    Segment,
    Fuse,
    Eval,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Render => "render",
            Stage::Match => "match",
            Stage::Segment => "segment",
            Stage::Fuse => "fuse",
            Stage::Eval => "eval",
        }
    }
}

/// Paths inside a run directory.
#[derive(Clone, Debug)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn dir(&self, stage: Stage) -> PathBuf {
        self.root.join(stage.name())
    }

    pub fn file(&self, stage: Stage, name: impl AsRef<Path>) -> PathBuf {
        self.dir(stage).join(name)
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn mesh(&self) -> PathBuf {
        self.file(Stage::Fuse, "mesh.ply")
    }

    pub fn report(&self) -> PathBuf {
        self.file(Stage::Eval, "report.json")
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub hash: String,
    pub seconds: f64,
    /// Paths relative to the run directory.
    pub outputs: Vec<String>,
    pub warnings: BTreeMap<String, u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub stages: BTreeMap<String, StageRecord>,
    pub skipped: Vec<String>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Option<Self>> {
        match std::fs::read_to_string(path) {
            Ok(text) => serde_json::from_str(&text).map(Some).map_err(|e| Error::format("run manifest", e.to_string())),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[derive(Default)]
struct Outcome {
    outputs: Vec<PathBuf>,
    warnings: BTreeMap<String, u64>,
}

impl Outcome {
    fn warn(&mut self, key: &str, n: u64) {
        if n > 0 {
            *self.warnings.entry(key.to_string()).or_default() += n;
        }
    }
}

/// Runs `f` inside a pool of `threads` workers (0 = all cores).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Maps frames in parallel batches of one frame per worker, returning results
/// in frame order. The first failing frame (in order) wins.
fn par_frames<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    let width = rayon::current_num_threads().max(1);
    let mut out = Vec::with_capacity(n);
    for start in (0..n).step_by(width) {
        let batch: Vec<Result<T>> = (start..(start + width).min(n)).into_par_iter().map(&f).collect();
        for r in batch {
            out.push(r?);
        }
    }
    Ok(out)
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex_digest(&bytes))
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("config serializes")
}

// ---------------------------------------------------------------- rig file

/// Per-frame rig metadata: `frame_id fx baseline`.
#[derive(Clone, Debug, PartialEq)]
pub struct RigEntry {
    pub id: String,
    pub fx: f64,
    pub baseline: f64,
}

pub fn format_rig_file(entries: &[RigEntry]) -> String {
    let mut out = String::from("# frame_id fx baseline\n");
    for e in entries {
        out.push_str(&format!("{} {} {}\n", e.id, e.fx, e.baseline));
    }
    out
}

pub fn parse_rig_file(text: &str) -> Result<Vec<RigEntry>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let t: Vec<&str> = line.split_whitespace().collect();
        let err = || Error::format("rig file", format!("line {}: expected `id fx baseline`", n + 1));
        if t.len() != 3 {
            return Err(err());
        }
        let fx: f64 = t[1].parse().map_err(|_| err())?;
        let baseline: f64 = t[2].parse().map_err(|_| err())?;
        out.push(RigEntry { id: t[0].to_string(), fx, baseline });
    }
    Ok(out)
}

/// Baseline for a set of frames: the explicit value if configured, else the
/// configured fraction of the scene radius.
pub fn rig_baseline(cfg: &PipelineConfig, frames: &[Frame]) -> Result<f64> {
    if let Some(b) = cfg.rig.baseline {
        return Ok(b);
    }
    let poses: Vec<Pose> = frames.iter().map(|f| f.camera.pose).collect();
    baseline_from_radius(scene_radius(&poses)?, cfg.rig.baseline_fraction)
}

/// Frames rendered by the render stage together with their baselines.
fn load_rendered_frames(ws: &Workspace) -> Result<(Vec<Frame>, Vec<f64>)> {
    let frames = read_camera_file(&ws.file(Stage::Render, "cameras.txt"))?;
    let rig_path = ws.file(Stage::Render, "rig.txt");
    let text = std::fs::read_to_string(&rig_path).map_err(|e| Error::io(&rig_path, e))?;
    let rig = parse_rig_file(&text)?;
    if rig.len() != frames.len() || rig.iter().zip(&frames).any(|(r, f)| r.id != f.id) {
        return Err(Error::format("rig file", "frame ids differ from cameras.txt"));
    }
    Ok((frames, rig.into_iter().map(|r| r.baseline).collect()))
}

// ---------------------------------------------------------------- render

enum SceneSource {
    Splat(GaussianCloud),
    Analytic(AnalyticScene),
}

fn load_scene(cfg: &PipelineConfig) -> Result<SceneSource> {
    if let Some(p) = &cfg.scene.splat {
        return Ok(SceneSource::Splat(load_gaussian_ply(p)?));
    }
    let p = cfg.scene.analytic.as_ref().ok_or_else(|| Error::Config("no scene source".into()))?;
    let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
    Ok(SceneSource::Analytic(AnalyticScene::from_toml(&text)?))
}

fn render_one(scene: &SceneSource, camera: &crate::camera::Camera, bg: [f64; 3], out: &mut Outcome) -> Result<RenderedFrame> {
    match scene {
        SceneSource::Splat(cloud) => {
            let (frame, stats) = render_splats(cloud, camera, bg)?;
            out.warn("splat_nan_skipped", stats.nan_skipped as u64);
            Ok(frame)
        }
        SceneSource::Analytic(s) => render_analytic(s, camera),
    }
}

fn ids_to_pfm(ids: &Grid<u32>) -> Grid<f32> {
    Grid { width: ids.width, height: ids.height, data: ids.data.iter().map(|&v| v as f32).collect() }
}

fn run_render(cfg: &PipelineConfig, ws: &Workspace) -> Result<Outcome> {
    let frames = read_camera_file(&cfg.scene.cameras)?;
    if frames.is_empty() {
        return Err(Error::Empty("camera file"));
    }
    let scene = load_scene(cfg)?;
    let baseline = rig_baseline(cfg, &frames)?;
    let dir = ws.dir(Stage::Render);
    create_dir(&dir)?;
    let bg = cfg.scene.background;
    let outcomes = par_frames(frames.len(), |i| {
        let f = &frames[i];
        let mut out = Outcome::default();
        let rig = crate::camera::make_stereo_rig(f.camera.pose, f.camera.intrinsics, baseline)?;
        let left = render_one(&scene, &rig.left_camera(), bg, &mut out).map_err(|e| e.at_frame("render", &f.id))?;
        let right = render_one(&scene, &rig.right_camera(), bg, &mut out).map_err(|e| e.at_frame("render", &f.id))?;
        for (name, img) in [("left", &left.rgb), ("right", &right.rgb)] {
            let p = dir.join(format!("{}_{name}.png", f.id));
            write_rgb_png(&p, img)?;
            out.outputs.push(p);
        }
        if let Some(depth) = &left.depth {
            let p = dir.join(format!("{}_depth.pfm", f.id));
            write_pfm(&p, depth)?;
            out.outputs.push(p);
        }
        if let Some(ids) = &left.object_ids {
            let p = dir.join(format!("{}_ids.pfm", f.id));
            write_pfm(&p, &ids_to_pfm(ids))?;
            out.outputs.push(p);
        }
        Ok(out)
    })?;
    let mut total = Outcome::default();
    for o in outcomes {
        total.outputs.extend(o.outputs);
        for (k, v) in o.warnings {
            total.warn(&k, v);
        }
    }
    let cams = dir.join("cameras.txt");
    write_camera_file(&cams, &frames)?;
    let rig: Vec<RigEntry> =
        frames.iter().map(|f| RigEntry { id: f.id.clone(), fx: f.camera.intrinsics.fx, baseline }).collect();
    let rig_path = dir.join("rig.txt");
    write_text(&rig_path, &format_rig_file(&rig))?;
    total.outputs.extend([cams, rig_path]);
    log::info!("rendered {} stereo pairs, baseline {baseline:.6}", frames.len());
    Ok(total)
}

// ---------------------------------------------------------------- match

fn disparity_pfm(d: &DisparityMap) -> Grid<f32> {
    Grid {
        width: d.values.width,
        height: d.values.height,
        data: d.values.data.iter().zip(&d.valid.data).map(|(&v, &ok)| if ok { v } else { f32::INFINITY }).collect(),
    }
}

fn run_match(cfg: &PipelineConfig, ws: &Workspace) -> Result<Outcome> {
    let (frames, baselines) = load_rendered_frames(ws)?;
    let dir = ws.dir(Stage::Match);
    create_dir(&dir)?;
    let outcomes = par_frames(frames.len(), |i| {
        let f = &frames[i];
        let b = baselines[i];
        let left = read_rgb_png(&ws.file(Stage::Render, format!("{}_left.png", f.id)))?;
        let right = read_rgb_png(&ws.file(Stage::Render, format!("{}_right.png", f.id)))?;
        let params = cfg.stereo.params(f.camera.intrinsics.fx);
        let (depth, disp) = stereo_depth(&left, &right, f.camera, b, &params).map_err(|e| e.at_frame("match", &f.id))?;
        let mut out = Outcome::default();
        let p = dir.join(format!("{}_disp.pfm", f.id));
        write_pfm(&p, &disparity_pfm(&disp))?;
        out.outputs.push(p);
        let p = dir.join(format!("{}_depth.pfm", f.id));
        let d32 = Grid { width: depth.depth.width, height: depth.depth.height, data: depth.depth.data.iter().map(|&z| z as f32).collect() };
        write_pfm(&p, &d32)?;
        out.outputs.push(p);
        for (name, m) in [("valid", &depth.valid), ("occlusion", &depth.occlusion_mask), ("range", &depth.range_mask)] {
            let p = dir.join(format!("{}_{name}.png", f.id));
            write_mask_png(&p, m)?;
            out.outputs.push(p);
        }
        let final_valid = depth.final_valid().count();
        let occluded = depth.occlusion_mask.and(&depth.valid).count();
        let out_of_range = (0..depth.depth.len()).filter(|&k| depth.valid.data[k] && !depth.range_mask.data[k]).count();
        let meta = format!(
            "fx {}\nbaseline {}\nmax_disparity {}\np1 {}\np2 {}\nnum_paths {}\nlr_threshold {}\nuniqueness_ratio {}\n\
             depth_min {}\ndepth_max {}\nvalid {}\noccluded {}\nout_of_range {}\nfinal_valid {}\n",
            f.camera.intrinsics.fx,
            b,
            params.max_disparity,
            params.p1,
            params.p2,
            params.num_paths,
            params.lr_threshold,
            params.uniqueness_ratio,
            2.0 * b,
            10.0 * b,
            depth.valid.count(),
            occluded,
            out_of_range,
            final_valid
        );
        let p = dir.join(format!("{}.meta", f.id));
        write_text(&p, &meta)?;
        out.outputs.push(p);
        if final_valid == 0 {
            log::warn!("frame {} has no usable depth", f.id);
            out.warn("frames_without_depth", 1);
        }
        Ok(out)
    })?;
    let mut total = Outcome::default();
    for o in outcomes {
        total.outputs.extend(o.outputs);
        for (k, v) in o.warnings {
            total.warn(&k, v);
        }
    }
    log::info!("matched {} pairs", frames.len());
    Ok(total)
}

/// Reads the depth frame written by the match stage.
pub fn load_depth_frame(ws: &Workspace, frame: &Frame, baseline: f64) -> Result<DepthFrame> {
    let d = read_pfm(&ws.file(Stage::Match, format!("{}_depth.pfm", frame.id)))?;
    let mask = |name: &str| read_mask_png(&ws.file(Stage::Match, format!("{}_{name}.png", frame.id)));
    let depth = Grid { width: d.width, height: d.height, data: d.data.iter().map(|&z| z as f64).collect() };
    let df = DepthFrame {
        valid: mask("valid")?,
        occlusion_mask: mask("occlusion")?,
        range_mask: mask("range")?,
        depth,
        camera: frame.camera,
        baseline,
    };
    let i = frame.camera.intrinsics;
    if !(df.depth.width == i.width && df.depth.height == i.height)
        || !df.valid.same_shape(&df.depth)
        || !df.occlusion_mask.same_shape(&df.depth)
        || !df.range_mask.same_shape(&df.depth)
    {
        return Err(Error::format("depth frame", format!("frame {}: map sizes disagree", frame.id)));
    }
    Ok(df)
}

/// Oracle depth from an analytic render, gated to the stereo range.
pub fn load_oracle_frame(ws: &Workspace, frame: &Frame, baseline: f64, object_id: Option<u32>) -> Result<DepthFrame> {
    let d = read_pfm(&ws.file(Stage::Render, format!("{}_depth.pfm", frame.id)))?;
    let mut df = DepthFrame::from_oracle(&d, frame.camera, baseline);
    df.range_mask = depth_range_mask(&df.depth, baseline)?;
    if let Some(id) = object_id {
        df.restrict(&oracle_object_mask(ws, frame, id)?);
    }
    Ok(df)
}

pub fn oracle_object_mask(ws: &Workspace, frame: &Frame, object_id: u32) -> Result<Mask> {
    let ids = read_pfm(&ws.file(Stage::Render, format!("{}_ids.pfm", frame.id)))?;
    Ok(Grid { width: ids.width, height: ids.height, data: ids.data.iter().map(|&v| v == object_id as f32).collect() })
}

// ---------------------------------------------------------------- segment

fn run_segment(cfg: &PipelineConfig, ws: &Workspace) -> Result<Outcome> {
    let seg = &cfg.segmentation;
    let (frames, baselines) = load_rendered_frames(ws)?;
    let images = frames
        .iter()
        .map(|f| read_rgb_png(&ws.file(Stage::Render, format!("{}_left.png", f.id))))
        .collect::<Result<Vec<_>>>()?;
    let depths =
        frames.iter().zip(&baselines).map(|(f, &b)| load_depth_frame(ws, f, b)).collect::<Result<Vec<_>>>()?;
    let initial = match (&seg.initial_mask, seg.object_id) {
        (Some(p), _) => read_mask_png(p)?,
        (None, Some(id)) => oracle_object_mask(ws, &frames[0], id)?,
        (None, None) => return Err(Error::Config("segmentation needs initial_mask or object_id".into())),
    };
    let dir = ws.dir(Stage::Segment);
    create_dir(&dir)?;
    let external;
    let refiner: &dyn Refiner = match seg.refiner {
        RefinerKind::Identity => &IdentityRefiner,
        RefinerKind::External => {
            let cmd = seg.command.as_deref().ok_or_else(|| Error::Config("external refiner needs a command".into()))?;
            external = ExternalRefiner::from_command(cmd, &dir.join("refiner"))?;
            &external
        }
    };
    let ids: Vec<String> = frames.iter().map(|f| f.id.clone()).collect();
    let input = TrackInput { ids: &ids, images: &images, depths: &depths };
    let track = track_object(&input, &initial, refiner, seg.dilation_radius, seg.seeds)?;
    let mut out = Outcome::default();
    let mut summary = String::from("# frame_id mask_pixels seeds\n");
    for (i, id) in ids.iter().enumerate() {
        let p = dir.join(format!("{id}_mask.png"));
        write_mask_png(&p, &track.masks[i])?;
        out.outputs.push(p);
        let p = dir.join(format!("{id}_seeds.txt"));
        write_text(&p, &crate::segmentation::format_seeds(&track.seeds[i]))?;
        out.outputs.push(p);
        summary.push_str(&format!("{id} {} {}\n", track.masks[i].count(), track.seeds[i].len()));
    }
    if let Some(j) = track.lost_at {
        summary.push_str(&format!("# lost at {}\n", ids[j]));
        out.warn("frames_after_track_lost", (ids.len() - j) as u64);
    }
    let p = dir.join("track.txt");
    write_text(&p, &summary)?;
    out.outputs.push(p);
    Ok(out)
}

// ---------------------------------------------------------------- fuse

/// Volume geometry recorded next to the mesh.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeInfo {
    pub origin: [f64; 3],
    pub voxel_size: f64,
    pub dims: [usize; 3],
    pub truncation: f64,
    pub frames: usize,
    pub triangles_before_cleanup: usize,
    pub triangles: usize,
}

pub fn read_volume_info(path: &Path) -> Result<VolumeInfo> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format("volume info", e.to_string()))
}

/// Voxel size and truncation for the configured fusion settings and the
/// observed depth box.
pub fn fusion_geometry(cfg: &PipelineConfig, extent: f64, fx: f64, baseline: f64) -> Result<(f64, f64)> {
    let f = &cfg.fusion;
    let lr = cfg.stereo.lr_threshold;
    match (f.voxel_size, f.truncation) {
        (Some(v), Some(t)) => Ok((v, t)),
        (Some(v), None) => Ok((v, auto_truncation(v, lr, fx, baseline)?)),
        (None, Some(t)) => Ok(((extent + 4.0 * t) / (f.resolution - 1) as f64, t)),
        (None, None) => voxel_for_resolution(extent, f.resolution, auto_truncation(0.0, lr, fx, baseline)?),
    }
}

fn run_fuse(cfg: &PipelineConfig, ws: &Workspace) -> Result<Outcome> {
    let (frames, baselines) = load_rendered_frames(ws)?;
    let mut depths = Vec::with_capacity(frames.len());
    for (f, &b) in frames.iter().zip(&baselines) {
        let mut d = load_depth_frame(ws, f, b)?;
        if cfg.segmentation.enabled {
            d.restrict(&read_mask_png(&ws.file(Stage::Segment, format!("{}_mask.png", f.id)))?);
        }
        depths.push(d);
    }
    let (lo, hi) = depth_bounds(&depths).ok_or(Error::Empty("depth samples"))?;
    let extent = (hi - lo).max();
    // The least favorable pair sets the error bound used for truncation.
    let (fx, b) = frames
        .iter()
        .zip(&baselines)
        .map(|(f, &b)| (f.camera.intrinsics.fx, b))
        .min_by(|x, y| (x.0 * x.1).total_cmp(&(y.0 * y.1)))
        .expect("non-empty");
    let (voxel, trunc) = fusion_geometry(cfg, extent, fx, b)?;
    let pad = Vector3::repeat(2.0 * trunc);
    let mut vol = TsdfVolume::covering(lo - pad, hi + pad, voxel, trunc)?;
    vol.max_weight = cfg.fusion.max_weight;
    log::info!("fusing {} frames into {:?} voxels of {voxel:.5}, truncation {trunc:.5}", depths.len(), vol.dims);
    let mut out = Outcome::default();
    for (f, d) in frames.iter().zip(&depths) {
        let rgb = read_rgb_png(&ws.file(Stage::Render, format!("{}_left.png", f.id)))?;
        let stats = vol.integrate(d, Some(&rgb)).map_err(|e| e.at_frame("fuse", &f.id))?;
        if stats.updated == 0 {
            out.warn("frames_without_updates", 1);
        }
    }
    let raw = extract_mesh(&vol, cfg.fusion.min_weight);
    let mesh = clean_mesh(&raw, cfg.fusion.min_triangles);
    out.warn("triangles_removed", (raw.faces.len() - mesh.faces.len()) as u64);
    if mesh.is_empty() {
        log::warn!("extracted mesh is empty");
        out.warn("empty_mesh", 1);
    }
    let dir = ws.dir(Stage::Fuse);
    create_dir(&dir)?;
    let p = ws.mesh();
    write_mesh_ply(&p, &mesh)?;
    out.outputs.push(p);
    let info = VolumeInfo {
        origin: vol.origin.into(),
        voxel_size: voxel,
        dims: vol.dims,
        truncation: trunc,
        frames: depths.len(),
        triangles_before_cleanup: raw.faces.len(),
        triangles: mesh.faces.len(),
    };
    let p = dir.join("volume.json");
    write_text(&p, &(serde_json::to_string_pretty(&info).expect("serializes") + "\n"))?;
    out.outputs.push(p);
    if cfg.fusion.checkpoint {
        let p = dir.join("tsdf.txt");
        vol.save_checkpoint(&p)?;
        out.outputs.push(p.clone());
        out.outputs.push(p.with_extension("bin"));
    }
    Ok(out)
}

// ---------------------------------------------------------------- eval

fn has_ground_truth(cfg: &PipelineConfig) -> bool {
    cfg.evaluation.ground_truth.is_some() || cfg.scene.analytic.is_some()
}

/// Reference cloud: the configured file, or for analytic scenes the
/// in-range oracle surface (restricted to the tracked object when
/// segmentation uses an object id) thinned to half a voxel.
fn ground_truth(cfg: &PipelineConfig, ws: &Workspace, voxel: f64) -> Result<(PointCloud, bool)> {
    if let Some(p) = &cfg.evaluation.ground_truth {
        return Ok((read_ground_truth(p, cfg.evaluation.samples, cfg.run.seed)?, false));
    }
    if cfg.scene.analytic.is_none() {
        return Err(Error::Config("evaluation.ground_truth is required for splat scenes".into()));
    }
    let (frames, baselines) = load_rendered_frames(ws)?;
    let object = if cfg.segmentation.enabled { cfg.segmentation.object_id } else { None };
    let oracle = frames
        .iter()
        .zip(&baselines)
        .map(|(f, &b)| load_oracle_frame(ws, f, b, object))
        .collect::<Result<Vec<_>>>()?;
    Ok((observable_surface(&oracle, voxel / 2.0)?, true))
}

fn run_eval(cfg: &PipelineConfig, ws: &Workspace) -> Result<Outcome> {
    let mesh = read_mesh_ply(&ws.mesh())?;
    let info = read_volume_info(&ws.file(Stage::Fuse, "volume.json"))?;
    let (gt, derived) = ground_truth(cfg, ws, info.voxel_size)?;
    let e = &cfg.evaluation;
    let settings = EvalSettings {
        tau: e.tau.unwrap_or(2.0 * info.voxel_size),
        samples: e.samples,
        seed: cfg.run.seed,
        icp: e.icp,
        icp_max_iters: e.icp_max_iters,
        icp_tol: e.icp_tol,
        mm_per_unit: e.mm_per_unit,
    };
    let report = evaluate_mesh(&mesh, &gt, &settings).map_err(|e| e.at_frame("eval", "mesh"))?;
    let dir = ws.dir(Stage::Eval);
    create_dir(&dir)?;
    let mut out = Outcome::default();
    if derived {
        let p = dir.join("gt.ply");
        write_point_cloud_ply(&p, &gt)?;
        out.outputs.push(p);
    }
    let p = ws.report();
    write_report(&p, &report)?;
    out.outputs.push(p);
    log::info!("precision {:.4} recall {:.4} f1 {:.4} chamfer {:.6}", report.precision, report.recall, report.f1, report.chamfer);
    Ok(out)
}

// ---------------------------------------------------------------- driver

/// Stages that a full run executes for this configuration, in order.
pub fn planned_stages(cfg: &PipelineConfig) -> Vec<Stage> {
    let mut s = vec![Stage::Render, Stage::Match];
    if cfg.segmentation.enabled {
        s.push(Stage::Segment);
    }
    s.push(Stage::Fuse);
    if has_ground_truth(cfg) {
        s.push(Stage::Eval);
    }
    s
}

/// Content hash of everything a stage depends on, chained through the
/// stages before it.
fn stage_hashes(cfg: &PipelineConfig) -> Result<BTreeMap<Stage, String>> {
    let mut hashes = BTreeMap::new();
    let mut prev = String::new();
    for stage in [Stage::Render, Stage::Match, Stage::Segment, Stage::Fuse, Stage::Eval] {
        let mut parts = vec![stage.name().to_string(), prev.clone()];
        match stage {
            Stage::Render => {
                parts.push(json(&cfg.scene));
                parts.push(json(&cfg.rig));
                for p in cfg.scene.splat.iter().chain(&cfg.scene.analytic).chain([&cfg.scene.cameras]) {
                    parts.push(file_digest(p)?);
                }
            }
            Stage::Match => parts.push(json(&cfg.stereo)),
            Stage::Segment => {
                if !cfg.segmentation.enabled {
                    continue;
                }
                parts.push(json(&cfg.segmentation));
                if let Some(p) = &cfg.segmentation.initial_mask {
                    parts.push(file_digest(p)?);
                }
            }
            Stage::Fuse => {
                parts.push(json(&cfg.fusion));
                parts.push(json(&cfg.segmentation.enabled));
            }
            Stage::Eval => {
                parts.push(json(&cfg.evaluation));
                parts.push(json(&cfg.run.seed));
                parts.push(json(&(cfg.segmentation.enabled, cfg.segmentation.object_id)));
                if let Some(p) = &cfg.evaluation.ground_truth {
                    parts.push(file_digest(p)?);
                }
            }
        }
        let h = hex_digest(parts.join("\n").as_bytes());
        prev = h.clone();
        hashes.insert(stage, h);
    }
    Ok(hashes)
}

fn run_stage(stage: Stage, cfg: &PipelineConfig, ws: &Workspace) -> Result<Outcome> {
    match stage {
        Stage::Render => run_render(cfg, ws),
        Stage::Match => run_match(cfg, ws),
        Stage::Segment => run_segment(cfg, ws),
        Stage::Fuse => run_fuse(cfg, ws),
        Stage::Eval => run_eval(cfg, ws),
    }
}

fn record(root: &Path, hash: String, seconds: f64, out: Outcome) -> StageRecord {
    let mut outputs: Vec<String> = out
        .outputs
        .iter()
        .map(|p| p.strip_prefix(root).unwrap_or(p).to_string_lossy().into_owned())
        .collect();
    outputs.sort();
    StageRecord { hash, seconds, outputs, warnings: out.warnings }
}

fn outputs_exist(root: &Path, rec: &StageRecord) -> bool {
    !rec.outputs.is_empty() && rec.outputs.iter().all(|o| root.join(o).is_file())
}

/// Runs the given stages, skipping any whose recorded hash matches and whose
/// outputs are all present when `resume` is set. The manifest is rewritten
/// after every stage so a failed run keeps the record of what finished.
pub fn run_stages(cfg: &PipelineConfig, stages: &[Stage], resume: bool) -> Result<Manifest> {
    let ws = Workspace::new(&cfg.run.output);
    create_dir(&ws.root)?;
    let hashes = stage_hashes(cfg)?;
    let mut manifest = Manifest::load(&ws.manifest())?.unwrap_or_default();
    manifest.config_hash = cfg.hash();
    manifest.skipped.clear();
    with_threads(cfg.run.threads, || -> Result<()> {
        for &stage in stages {
            let hash = hashes[&stage].clone();
            if resume {
                if let Some(rec) = manifest.stages.get(stage.name()) {
                    if rec.hash == hash && outputs_exist(&ws.root, rec) {
                        log::info!("{}: up to date", stage.name());
                        manifest.skipped.push(stage.name().to_string());
                        continue;
                    }
                }
            }
            log::info!("{}: running", stage.name());
            manifest.stages.remove(stage.name());
            let t = Instant::now();
            let out = run_stage(stage, cfg, &ws);
            let out = match out {
                Ok(o) => o,
                Err(e) => {
                    manifest.save(&ws.manifest())?;
                    return Err(e);
                }
            };
            manifest.stages.insert(stage.name().to_string(), record(&ws.root, hash, t.elapsed().as_secs_f64(), out));
            manifest.save(&ws.manifest())?;
        }
        Ok(())
    })??;
    Ok(manifest)
}

pub fn cmd_render_stereo(cfg: &PipelineConfig) -> Result<Manifest> {
    run_stages(cfg, &[Stage::Render], false)
}

pub fn cmd_match(cfg: &PipelineConfig) -> Result<Manifest> {
    run_stages(cfg, &[Stage::Match], false)
}

pub fn cmd_segment(cfg: &PipelineConfig) -> Result<Manifest> {
    if !cfg.segmentation.enabled {
        return Err(Error::Config("segmentation.enabled is false".into()));
    }
    run_stages(cfg, &[Stage::Segment], false)
}

pub fn cmd_fuse(cfg: &PipelineConfig) -> Result<Manifest> {
    run_stages(cfg, &[Stage::Fuse], false)
}

pub fn cmd_eval(cfg: &PipelineConfig) -> Result<Manifest> {
    run_stages(cfg, &[Stage::Eval], false)
}

/// All planned stages with resume. Without a ground truth the eval stage is
/// left out with a warning.
pub fn cmd_pipeline(cfg: &PipelineConfig) -> Result<Manifest> {
    if !has_ground_truth(cfg) {
        log::warn!("no ground truth configured; skipping evaluation");
    }
    run_stages(cfg, &planned_stages(cfg), true)
}

/// Converts a COLMAP text model directory into a camera file.
pub fn cmd_convert_colmap(model_dir: &Path, output: &Path) -> Result<usize> {
    let frames = crate::camera::colmap::convert_colmap_dir(model_dir)?;
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_camera_file(output, &frames)?;
    Ok(frames.len())
}
