//! Pretrained Gaussian-splat clouds: PLY ingestion and CPU forward rendering.
//!
//! Rendering follows the EWA splatting scheme of the reference 3DGS
//! rasterizer: each Gaussian is projected with the local affine
//! approximation of the pinhole projection, all splats are sorted once by
//! camera depth (ties by element index) and composited front to back.

use std::io::Write;
use std::path::Path;

use image::RgbImage;
use nalgebra::{Matrix2x3, Matrix3, Quaternion, UnitQuaternion, Vector3};
use rayon::prelude::*;

use super::{to_rgb8, RenderedFrame};
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::ply;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Screen-space variance added to every projected covariance (pixels²).
pub const SCREEN_DILATION: f64 = 0.3;
/// Compositing stops once transmittance would fall below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
const MAX_ALPHA: f64 = 0.99;
const MIN_ALPHA: f64 = 1.0 / 255.0;
const NEAR_PLANE: f64 = 0.01;
const TILE: u32 = 16;

/// Number of SH coefficients per channel for degree 3.
pub const SH_COEFFS: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    pub position: Vector3<f64>,
    /// Activated (linear) standard deviations along the local axes.
    pub scale: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    /// Activated opacity in (0, 1).
    pub opacity: f64,
    /// SH coefficients per band, each an RGB triple. Index 0 is the DC term.
    pub sh: [[f64; 3]; SH_COEFFS],
}

impl Gaussian {
    /// Isotropic Gaussian with a view-independent color.
    pub fn isotropic(position: Vector3<f64>, sigma: f64, opacity: f64, rgb: [f64; 3]) -> Self {
        let mut sh = [[0.0; 3]; SH_COEFFS];
        sh[0] = dc_from_rgb(rgb);
        Self { position, scale: Vector3::repeat(sigma), rotation: UnitQuaternion::identity(), opacity, sh }
    }

    fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.scale.iter().all(|v| v.is_finite())
            && self.rotation.coords.iter().all(|v| v.is_finite())
            && self.opacity.is_finite()
            && self.sh.iter().flatten().all(|v| v.is_finite())
    }

    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation.to_rotation_matrix().into_inner();
        let s = Matrix3::from_diagonal(&self.scale.component_mul(&self.scale));
        r * s * r.transpose()
    }
}

/// DC coefficient that renders as `rgb` from every direction.
pub fn dc_from_rgb(rgb: [f64; 3]) -> [f64; 3] {
    rgb.map(|c| (c - 0.5) / SH_C0)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussianCloud {
    pub gaussians: Vec<Gaussian>,
    /// Highest SH band evaluated when rendering (0..=3).
    pub sh_degree: u8,
}

impl GaussianCloud {
    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }
}

/// Evaluates the SH color along unit direction `dir` (world frame), offset by
/// 0.5 and clamped to [0, 1].
pub fn eval_sh(sh: &[[f64; 3]; SH_COEFFS], degree: u8, dir: &Vector3<f64>) -> [f64; 3] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut basis = [0.0; SH_COEFFS];
    basis[0] = SH_C0;
    if degree >= 1 {
        basis[1] = -SH_C1 * y;
        basis[2] = SH_C1 * z;
        basis[3] = -SH_C1 * x;
    }
    if degree >= 2 {
        let (xx, yy, zz, xy, yz, xz) = (x * x, y * y, z * z, x * y, y * z, x * z);
        basis[4] = SH_C2[0] * xy;
        basis[5] = SH_C2[1] * yz;
        basis[6] = SH_C2[2] * (2.0 * zz - xx - yy);
        basis[7] = SH_C2[3] * xz;
        basis[8] = SH_C2[4] * (xx - yy);
        if degree >= 3 {
            basis[9] = SH_C3[0] * y * (3.0 * xx - yy);
            basis[10] = SH_C3[1] * xy * z;
            basis[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
            basis[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
            basis[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
            basis[14] = SH_C3[5] * z * (xx - yy);
            basis[15] = SH_C3[6] * x * (xx - 3.0 * yy);
        }
    }
    let mut rgb = [0.5; 3];
    for (b, coeff) in basis.iter().zip(sh) {
        for c in 0..3 {
            rgb[c] += b * coeff[c];
        }
    }
    rgb.map(|v| v.clamp(0.0, 1.0))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

const REQUIRED_PREFIX: [&str; 3] = ["x", "y", "z"];

/// Loads a 3DGS-convention binary PLY and applies activations (exp on
/// scales, sigmoid on opacity, quaternion normalization).
pub fn load_gaussian_ply(path: &Path) -> Result<GaussianCloud> {
    let file = ply::read_ply(path).map_err(|e| match e {
        Error::Format { msg, .. } => Error::UnsupportedSplatPly(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    gaussians_from_ply(&file)
}

pub fn gaussians_from_ply(file: &ply::PlyFile) -> Result<GaussianCloud> {
    let vertex = file
        .element("vertex")
        .ok_or_else(|| Error::UnsupportedSplatPly("no vertex element".into()))?;
    let col = |name: &str| {
        vertex
            .scalar(name)
            .ok_or_else(|| Error::UnsupportedSplatPly(format!("missing property {name}")))
    };
    let mut names: Vec<String> = REQUIRED_PREFIX.iter().map(|s| s.to_string()).collect();
    names.extend((0..3).map(|i| format!("f_dc_{i}")));
    names.extend((0..45).map(|i| format!("f_rest_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    let cols: Vec<&[f64]> = names.iter().map(|n| col(n)).collect::<Result<_>>()?;
    if vertex.count == 0 {
        return Err(Error::Empty("splat PLY"));
    }
    let gaussians = (0..vertex.count)
        .map(|i| {
            let c = |k: usize| cols[k][i];
            let mut sh = [[0.0; 3]; SH_COEFFS];
            sh[0] = [c(3), c(4), c(5)];
            // f_rest is channel-major: 15 coefficients of R, then G, then B.
            for band in 1..SH_COEFFS {
                for ch in 0..3 {
                    sh[band][ch] = c(6 + ch * 15 + band - 1);
                }
            }
            let q = Quaternion::new(c(55), c(56), c(57), c(58));
            Gaussian {
                position: Vector3::new(c(0), c(1), c(2)),
                scale: Vector3::new(c(52).exp(), c(53).exp(), c(54).exp()),
                rotation: UnitQuaternion::from_quaternion(q),
                opacity: sigmoid(c(51)),
                sh,
            }
        })
        .collect();
    Ok(GaussianCloud { gaussians, sh_degree: 3 })
}

/// Writes a cloud in the 3DGS binary PLY layout, storing raw (pre-activation)
/// values.
pub fn write_gaussian_ply(path: &Path, cloud: &GaussianCloud) -> Result<()> {
    let mut out = Vec::new();
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header += &format!("element vertex {}\n", cloud.len());
    let mut props: Vec<String> = ["x", "y", "z", "nx", "ny", "nz"].iter().map(|s| s.to_string()).collect();
    props.extend((0..3).map(|i| format!("f_dc_{i}")));
    props.extend((0..45).map(|i| format!("f_rest_{i}")));
    props.push("opacity".into());
    props.extend((0..3).map(|i| format!("scale_{i}")));
    props.extend((0..4).map(|i| format!("rot_{i}")));
    for p in &props {
        header += &format!("property float {p}\n");
    }
    header += "end_header\n";
    out.extend_from_slice(header.as_bytes());
    for g in &cloud.gaussians {
        let mut rec = Vec::with_capacity(props.len());
        rec.extend(g.position.iter().copied());
        rec.extend([0.0; 3]);
        rec.extend(g.sh[0]);
        for ch in 0..3 {
            rec.extend((1..SH_COEFFS).map(|band| g.sh[band][ch]));
        }
        rec.push(logit(g.opacity));
        rec.extend(g.scale.iter().map(|s| s.ln()));
        let q = g.rotation.quaternion();
        rec.extend([q.w, q.i, q.j, q.k]);
        for v in rec {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Per-render bookkeeping.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SplatStats {
    pub nan_skipped: usize,
    pub culled: usize,
    pub drawn: usize,
}

#[derive(Clone, Copy, Debug)]
struct Splat2d {
    index: usize,
    depth: f64,
    center: [f64; 2],
    /// Inverse 2D covariance as (a, b, c) of [[a, b], [b, c]].
    conic: [f64; 3],
    radius: f64,
    opacity: f64,
    rgb: [f64; 3],
}

fn project_gaussian(g: &Gaussian, index: usize, camera: &Camera, sh_degree: u8) -> Option<Splat2d> {
    let k = &camera.intrinsics;
    let pose = &camera.pose;
    let t = pose.world_to_camera(&g.position);
    if t.z <= NEAR_PLANE {
        return None;
    }
    let lim_x = 1.3 * (k.width as f64 / 2.0) / k.fx;
    let lim_y = 1.3 * (k.height as f64 / 2.0) / k.fy;
    let tx = (t.x / t.z).clamp(-lim_x, lim_x) * t.z;
    let ty = (t.y / t.z).clamp(-lim_y, lim_y) * t.z;
    let jac = Matrix2x3::new(
        k.fx / t.z,
        0.0,
        -k.fx * tx / (t.z * t.z),
        0.0,
        k.fy / t.z,
        -k.fy * ty / (t.z * t.z),
    );
    let m = jac * pose.rotation.transpose();
    let cov = m * g.covariance() * m.transpose();
    let a = cov[(0, 0)] + SCREEN_DILATION;
    let b = cov[(0, 1)];
    let c = cov[(1, 1)] + SCREEN_DILATION;
    let det = a * c - b * b;
    if !(det > 0.0) {
        return None;
    }
    let mid = 0.5 * (a + c);
    let lambda = mid + (mid * mid - det).max(0.1).sqrt();
    let radius = (3.0 * lambda.sqrt()).ceil();
    let center = [k.fx * t.x / t.z + k.cx, k.fy * t.y / t.z + k.cy];
    if center[0] + radius < 0.0
        || center[1] + radius < 0.0
        || center[0] - radius > (k.width - 1) as f64
        || center[1] - radius > (k.height - 1) as f64
    {
        return None;
    }
    let dir = (g.position - pose.center).normalize();
    Some(Splat2d {
        index,
        depth: t.z,
        center,
        conic: [c / det, -b / det, a / det],
        radius,
        opacity: g.opacity,
        rgb: eval_sh(&g.sh, sh_degree, &dir),
    })
}

/// Forward-renders the cloud. Output is bit-identical for identical input
/// regardless of element storage order or thread count.
pub fn render_splats(cloud: &GaussianCloud, camera: &Camera, background: [f64; 3]) -> Result<(RenderedFrame, SplatStats)> {
    if cloud.is_empty() {
        return Err(Error::Empty("Gaussian cloud"));
    }
    let k = camera.intrinsics;
    let mut stats = SplatStats::default();
    let mut splats = Vec::with_capacity(cloud.len());
    for (i, g) in cloud.gaussians.iter().enumerate() {
        if !g.is_finite() {
            stats.nan_skipped += 1;
            continue;
        }
        match project_gaussian(g, i, camera, cloud.sh_degree) {
            Some(s) => splats.push(s),
            None => stats.culled += 1,
        }
    }
    // Canonical order: depth, then the element's own position as a
    // storage-independent tie breaker, then index.
    splats.sort_by(|p, q| {
        p.depth
            .total_cmp(&q.depth)
            .then_with(|| cloud.gaussians[p.index].position.x.total_cmp(&cloud.gaussians[q.index].position.x))
            .then_with(|| cloud.gaussians[p.index].position.y.total_cmp(&cloud.gaussians[q.index].position.y))
            .then_with(|| p.index.cmp(&q.index))
    });
    stats.drawn = splats.len();

    let tiles_x = k.width.div_ceil(TILE);
    let tiles_y = k.height.div_ceil(TILE);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); (tiles_x * tiles_y) as usize];
    for (si, s) in splats.iter().enumerate() {
        let x0 = ((s.center[0] - s.radius).max(0.0) as u32 / TILE).min(tiles_x - 1);
        let x1 = ((s.center[0] + s.radius).min((k.width - 1) as f64).max(0.0) as u32 / TILE).min(tiles_x - 1);
        let y0 = ((s.center[1] - s.radius).max(0.0) as u32 / TILE).min(tiles_y - 1);
        let y1 = ((s.center[1] + s.radius).min((k.height - 1) as f64).max(0.0) as u32 / TILE).min(tiles_y - 1);
        for ty in y0..=y1 {
            for tx in x0..=x1 {
                bins[(ty * tiles_x + tx) as usize].push(si as u32);
            }
        }
    }

    let width = k.width as usize;
    let mut pixels = vec![0u8; width * k.height as usize * 3];
    pixels.par_chunks_mut(width * 3).enumerate().for_each(|(y, row)| {
        let ty = y as u32 / TILE;
        for x in 0..width {
            let bin = &bins[(ty * tiles_x + x as u32 / TILE) as usize];
            let mut transmittance = 1.0;
            let mut color = [0.0; 3];
            for &si in bin {
                let s = &splats[si as usize];
                let dx = s.center[0] - x as f64;
                let dy = s.center[1] - y as f64;
                let power = -0.5 * (s.conic[0] * dx * dx + s.conic[2] * dy * dy) - s.conic[1] * dx * dy;
                if power > 0.0 {
                    continue;
                }
                let alpha = (s.opacity * power.exp()).min(MAX_ALPHA);
                if alpha < MIN_ALPHA {
                    continue;
                }
                let next = transmittance * (1.0 - alpha);
                if next < MIN_TRANSMITTANCE {
                    break;
                }
                for c in 0..3 {
                    color[c] += s.rgb[c] * alpha * transmittance;
                }
                transmittance = next;
            }
            for c in 0..3 {
                row[x * 3 + c] = to_rgb8(color[c] + transmittance * background[c]);
            }
        }
    });
    let rgb = RgbImage::from_raw(k.width, k.height, pixels).expect("buffer sized from intrinsics");
    Ok((RenderedFrame { rgb, depth: None, object_ids: None, camera: *camera }, stats))
}
