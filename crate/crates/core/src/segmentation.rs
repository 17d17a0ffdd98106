//! Object-mask tracking across a frame sequence: reproject the previous mask
//! through its depth, dilate, pick farthest-point seeds and hand the result
//! to a refiner.

use std::path::{Path, PathBuf};
use std::process::Command;

use image::RgbImage;
use nalgebra::Vector3;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::raster::{read_mask_png, write_mask_png, write_rgb_png, Grid, Mask};
use crate::stereo::DepthFrame;

pub const DEFAULT_DILATION_RADIUS: u32 = 10;
pub const DEFAULT_SEED_COUNT: usize = 5;

pub type Pixel = (u32, u32);

/// Projects the masked pixels of `depth` that are valid and pass the
/// left/right check into `target` and splats each hit into its 3x3
/// neighborhood. The result is empty when no masked pixel carries depth or
/// nothing lands in the target image.
pub fn propagate_mask(mask: &Mask, depth: &DepthFrame, target: &Camera) -> Result<Mask> {
    if !mask.same_shape(&depth.depth) {
        return Err(Error::DimensionMismatch("mask does not match depth frame".into()));
    }
    let src = &depth.camera;
    let t = target.intrinsics;
    let rot_t = target.pose.rotation.transpose();
    let mut out = Grid::filled(t.width, t.height, false);
    for (u, v) in mask.pixels() {
        let i = depth.depth.index(u, v);
        // The range gate is a fusion filter; applying it here would drop the
        // object's silhouette band and shrink the mask every step.
        if !depth.valid.data[i] || depth.occlusion_mask.data[i] {
            continue;
        }
        let z = depth.depth.data[i];
        let local = Vector3::new(
            (u as f64 - src.intrinsics.cx) * z / src.intrinsics.fx,
            (v as f64 - src.intrinsics.cy) * z / src.intrinsics.fy,
            z,
        );
        let q = rot_t * (src.pose.camera_to_world(&local) - target.pose.center);
        if q.z <= 0.0 {
            continue;
        }
        let pu = (t.fx * q.x / q.z + t.cx).round();
        let pv = (t.fy * q.y / q.z + t.cy).round();
        for dv in -1..=1 {
            for du in -1..=1 {
                let (x, y) = (pu + du as f64, pv + dv as f64);
                if x >= 0.0 && y >= 0.0 && x < t.width as f64 && y < t.height as f64 {
                    out.set(x as u32, y as u32, true);
                }
            }
        }
    }
    Ok(out)
}

/// Dilation by the disc `dx^2 + dy^2 <= r^2`.
pub fn dilate(mask: &Mask, radius: u32) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    let r = radius as i64;
    let offsets: Vec<(i64, i64)> =
        (-r..=r).flat_map(|dy| (-r..=r).map(move |dx| (dx, dy))).filter(|(dx, dy)| dx * dx + dy * dy <= r * r).collect();
    let (w, h) = (mask.width as i64, mask.height as i64);
    let mut out = mask.clone();
    for (u, v) in mask.pixels() {
        // Interior pixels add nothing new.
        let interior = [(1, 0), (-1, 0), (0, 1), (0, -1)].iter().all(|(dx, dy)| {
            let (x, y) = (u as i64 + dx, v as i64 + dy);
            x >= 0 && y >= 0 && x < w && y < h && *mask.get(x as u32, y as u32)
        });
        if interior {
            continue;
        }
        for (dx, dy) in &offsets {
            let (x, y) = (u as i64 + dx, v as i64 + dy);
            if x >= 0 && y >= 0 && x < w && y < h {
                out.set(x as u32, y as u32, true);
            }
        }
    }
    out
}

/// Farthest-point sampling over mask pixels. Starts at the pixel nearest the
/// mask centroid; each further seed maximizes the distance to the seeds so
/// far. Ties go to the first pixel in row-major order. Asking for more seeds
/// than pixels returns every pixel.
pub fn select_seeds_fps(mask: &Mask, k: usize) -> Result<Vec<Pixel>> {
    if k == 0 {
        return Err(Error::invalid("seed count must be at least 1"));
    }
    let pts: Vec<Pixel> = mask.pixels().collect();
    if pts.is_empty() {
        return Err(Error::Empty("mask"));
    }
    let n = pts.len() as f64;
    let cu = pts.iter().map(|p| p.0 as f64).sum::<f64>() / n;
    let cv = pts.iter().map(|p| p.1 as f64).sum::<f64>() / n;
    let mut first = 0;
    let mut best = f64::INFINITY;
    for (i, p) in pts.iter().enumerate() {
        let d = (p.0 as f64 - cu).powi(2) + (p.1 as f64 - cv).powi(2);
        if d < best {
            best = d;
            first = i;
        }
    }
    let d2 = |a: Pixel, b: Pixel| {
        let (du, dv) = (a.0 as i64 - b.0 as i64, a.1 as i64 - b.1 as i64);
        du * du + dv * dv
    };
    let mut seeds = vec![pts[first]];
    let mut nearest: Vec<i64> = pts.iter().map(|&p| d2(p, pts[first])).collect();
    while seeds.len() < k.min(pts.len()) {
        let mut pick = 0;
        for i in 1..pts.len() {
            if nearest[i] > nearest[pick] {
                pick = i;
            }
        }
        seeds.push(pts[pick]);
        for (i, &p) in pts.iter().enumerate() {
            nearest[i] = nearest[i].min(d2(p, pts[pick]));
        }
    }
    Ok(seeds)
}

pub fn format_seeds(seeds: &[Pixel]) -> String {
    seeds.iter().map(|(u, v)| format!("{u} {v}\n")).collect()
}

pub fn parse_seeds(text: &str) -> Result<Vec<Pixel>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let t: Vec<&str> = l.split_whitespace().collect();
            match t.as_slice() {
                [u, v] => Ok((
                    u.parse().map_err(|_| Error::format("seeds", format!("bad line {l:?}")))?,
                    v.parse().map_err(|_| Error::format("seeds", format!("bad line {l:?}")))?,
                )),
                _ => Err(Error::format("seeds", format!("expected 'u v', got {l:?}"))),
            }
        })
        .collect()
}

/// Turns a propagated, dilated mask plus seed points into the final mask
/// for a frame.
pub trait Refiner: Sync {
    fn name(&self) -> &str;
    fn refine(&self, frame_id: &str, image: &RgbImage, prior: &Mask, seeds: &[Pixel]) -> Result<Mask>;
}

/// Passes the prior through unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityRefiner;

impl Refiner for IdentityRefiner {
    fn name(&self) -> &str {
        "identity"
    }

    fn refine(&self, _: &str, _: &RgbImage, prior: &Mask, _: &[Pixel]) -> Result<Mask> {
        Ok(prior.clone())
    }
}

/// Out-of-process refiner. For each frame a directory `<workdir>/<frame>`
/// receives `image.png`, `seeds.txt` (one `u v` per line) and `prior.png`;
/// the command runs with that directory as its last argument and must write
/// `mask.png` there, same size as the image.
#[derive(Clone, Debug)]
pub struct ExternalRefiner {
    pub program: String,
    pub args: Vec<String>,
    pub workdir: PathBuf,
}

impl ExternalRefiner {
    /// Splits a command line on whitespace.
    pub fn from_command(command: &str, workdir: &Path) -> Result<Self> {
        let mut parts = command.split_whitespace().map(str::to_string);
        let program = parts.next().ok_or_else(|| Error::Config("external refiner command is empty".into()))?;
        Ok(Self { program, args: parts.collect(), workdir: workdir.to_path_buf() })
    }
}

impl Refiner for ExternalRefiner {
    fn name(&self) -> &str {
        "external"
    }

    fn refine(&self, frame_id: &str, image: &RgbImage, prior: &Mask, seeds: &[Pixel]) -> Result<Mask> {
        let dir = self.workdir.join(frame_id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_rgb_png(&dir.join("image.png"), image)?;
        write_mask_png(&dir.join("prior.png"), prior)?;
        let seeds_path = dir.join("seeds.txt");
        std::fs::write(&seeds_path, format_seeds(seeds)).map_err(|e| Error::io(&seeds_path, e))?;
        let out_path = dir.join("mask.png");
        let _ = std::fs::remove_file(&out_path);
        let status = Command::new(&self.program)
            .args(&self.args)
            .arg(&dir)
            .status()
            .map_err(|e| Error::Refiner(format!("cannot run {}: {e}", self.program)))?;
        if !status.success() {
            return Err(Error::Refiner(format!("{} exited with {status} on frame {frame_id}", self.program)));
        }
        let mask = read_mask_png(&out_path)?;
        if (mask.width, mask.height) != image.dimensions() {
            return Err(Error::Refiner(format!(
                "mask for frame {frame_id} is {}x{}, image is {}x{}",
                mask.width,
                mask.height,
                image.width(),
                image.height()
            )));
        }
        Ok(mask)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MaskTrack {
    pub masks: Vec<Mask>,
    pub seeds: Vec<Vec<Pixel>>,
    /// First frame whose propagated mask came out empty.
    pub lost_at: Option<usize>,
}

pub struct TrackInput<'a> {
    pub ids: &'a [String],
    pub images: &'a [RgbImage],
    pub depths: &'a [DepthFrame],
}

/// Tracks an object from `initial_mask` on frame 0 through the sequence.
/// Frame `j` only reads frames `j - 1` and `j`.
pub fn track_object(
    input: &TrackInput,
    initial_mask: &Mask,
    refiner: &dyn Refiner,
    dilation_radius: u32,
    k: usize,
) -> Result<MaskTrack> {
    let n = input.images.len();
    if input.depths.len() != n || input.ids.len() != n {
        return Err(Error::DimensionMismatch("track inputs differ in length".into()));
    }
    if n == 0 {
        return Err(Error::Empty("frame sequence"));
    }
    for (img, d) in input.images.iter().zip(input.depths) {
        if img.dimensions() != (d.depth.width, d.depth.height) {
            return Err(Error::DimensionMismatch("image and depth sizes differ".into()));
        }
    }
    if (initial_mask.width, initial_mask.height) != input.images[0].dimensions() {
        return Err(Error::DimensionMismatch("initial mask does not match frame 0".into()));
    }
    let mut track = MaskTrack::default();
    let first_seeds = if initial_mask.none() { Vec::new() } else { select_seeds_fps(initial_mask, k)? };
    track.masks.push(initial_mask.clone());
    track.seeds.push(first_seeds);
    for j in 1..n {
        let (w, h) = input.images[j].dimensions();
        if track.lost_at.is_some() {
            track.masks.push(Grid::filled(w, h, false));
            track.seeds.push(Vec::new());
            continue;
        }
        let prev = &track.masks[j - 1];
        let projected = propagate_mask(prev, &input.depths[j - 1], &input.depths[j].camera)?;
        if projected.none() {
            log::warn!("object track lost at frame {}", input.ids[j]);
            track.lost_at = Some(j);
            track.masks.push(projected);
            track.seeds.push(Vec::new());
            continue;
        }
        let prior = dilate(&projected, dilation_radius);
        let seeds = select_seeds_fps(&prior, k)?;
        let mask = refiner
            .refine(&input.ids[j], &input.images[j], &prior, &seeds)
            .map_err(|e| e.at_frame("segment", &input.ids[j]))?;
        track.masks.push(mask);
        track.seeds.push(seeds);
    }
    Ok(track)
}
