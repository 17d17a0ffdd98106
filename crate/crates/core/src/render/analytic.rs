//! Ray-cast primitive scenes with exact depth, used as ground truth.

use image::RgbImage;
use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{to_rgb8, RenderedFrame};
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::raster::Grid;

const HIT_EPS: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Albedo {
    Solid {
        rgb: [f64; 3],
    },
    /// Fractal value noise evaluated at the world-space hit point.
    Noise {
        rgb: [f64; 3],
        /// Relative modulation amplitude in [0, 1].
        contrast: f64,
        /// Lattice frequency of the coarsest octave (cycles per world unit).
        frequency: f64,
        octaves: u32,
        seed: u64,
    },
}

impl Albedo {
    pub fn color_at(&self, p: &Vector3<f64>) -> [f64; 3] {
        match *self {
            Albedo::Solid { rgb } => rgb,
            Albedo::Noise { rgb, contrast, frequency, octaves, seed } => {
                let n = fractal_noise(p * frequency, octaves.max(1), seed);
                let gain = 1.0 - contrast + 2.0 * contrast * n;
                rgb.map(|c| c * gain)
            }
        }
    }
}

fn hash3(x: i64, y: i64, z: i64, seed: u64) -> f64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for v in [x, y, z] {
        h ^= v as u64;
        h = h.wrapping_add(0x9E37_79B9_7F4A_7C15);
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(p: Vector3<f64>, seed: u64) -> f64 {
    let base = p.map(f64::floor);
    let f = p - base;
    let s = f.map(|t| t * t * (3.0 - 2.0 * t));
    let (ix, iy, iz) = (base.x as i64, base.y as i64, base.z as i64);
    let mut acc = 0.0;
    for dz in 0..2 {
        for dy in 0..2 {
            for dx in 0..2 {
                let w = (if dx == 1 { s.x } else { 1.0 - s.x })
                    * (if dy == 1 { s.y } else { 1.0 - s.y })
                    * (if dz == 1 { s.z } else { 1.0 - s.z });
                acc += w * hash3(ix + dx, iy + dy, iz + dz, seed);
            }
        }
    }
    acc
}

/// Fractal sum of value noise normalized to [0, 1].
pub fn fractal_noise(p: Vector3<f64>, octaves: u32, seed: u64) -> f64 {
    let mut sum = 0.0;
    let mut norm = 0.0;
    let mut amp = 1.0;
    let mut freq = 1.0;
    for o in 0..octaves {
        sum += amp * value_noise(p * freq, seed.wrapping_add(o as u64 * 7919));
        norm += amp;
        amp *= 0.5;
        freq *= 2.0;
    }
    sum / norm
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Shape {
    Sphere { center: [f64; 3], radius: f64 },
    Box { min: [f64; 3], max: [f64; 3] },
    /// Points `x` with `normal · x = offset`.
    Plane { normal: [f64; 3], offset: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    #[serde(flatten)]
    pub shape: Shape,
    pub albedo: Albedo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticScene {
    #[serde(rename = "primitive")]
    pub primitives: Vec<Primitive>,
    #[serde(default)]
    pub background: [f64; 3],
    /// Ambient fraction of the directional headlight shading.
    #[serde(default = "default_ambient")]
    pub ambient: f64,
}

fn default_ambient() -> f64 {
    0.3
}

impl AnalyticScene {
    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() {
            return Err(Error::Empty("analytic scene"));
        }
        for p in &self.primitives {
            match &p.shape {
                Shape::Sphere { radius, .. } if !(*radius > 0.0) => {
                    return Err(Error::invalid("sphere radius must be positive"))
                }
                Shape::Box { min, max } if !(0..3).all(|i| min[i] < max[i]) => {
                    return Err(Error::invalid("box min must be below max componentwise"))
                }
                Shape::Plane { normal, .. } if (Vector3::from(*normal).norm() - 1.0).abs() > 1e-9 => {
                    return Err(Error::invalid("plane normal must be unit length"))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let scene: Self = toml::from_str(text).map_err(|e| Error::format("scene description", e.to_string()))?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene serializes")
    }

    /// Nearest intersection along `origin + t * dir` with `t > 0`: returns
    /// `(t, primitive index, surface normal)`.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, usize, Vector3<f64>)> {
        let mut best: Option<(f64, usize, Vector3<f64>)> = None;
        for (i, p) in self.primitives.iter().enumerate() {
            if let Some((t, n)) = intersect_shape(&p.shape, origin, dir) {
                if best.is_none_or(|(bt, _, _)| t < bt) {
                    best = Some((t, i, n));
                }
            }
        }
        best
    }
}

fn intersect_shape(shape: &Shape, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
    match shape {
        Shape::Sphere { center, radius } => {
            let c = Vector3::from(*center);
            let oc = o - c;
            let a = d.dot(d);
            let b = oc.dot(d);
            let cc = oc.dot(&oc) - radius * radius;
            let disc = b * b - a * cc;
            if disc < 0.0 {
                return None;
            }
            let sq = disc.sqrt();
            let t = [(-b - sq) / a, (-b + sq) / a].into_iter().find(|&t| t > HIT_EPS)?;
            Some((t, (o + d * t - c) / *radius))
        }
        Shape::Box { min, max } => {
            let mut t0 = f64::NEG_INFINITY;
            let mut t1 = f64::INFINITY;
            let mut enter_axis = 0;
            let mut exit_axis = 0;
            for i in 0..3 {
                if d[i].abs() < 1e-300 {
                    if o[i] < min[i] || o[i] > max[i] {
                        return None;
                    }
                    continue;
                }
                let a = (min[i] - o[i]) / d[i];
                let b = (max[i] - o[i]) / d[i];
                let (near, far) = if a < b { (a, b) } else { (b, a) };
                if near > t0 {
                    t0 = near;
                    enter_axis = i;
                }
                if far < t1 {
                    t1 = far;
                    exit_axis = i;
                }
            }
            if t0 > t1 {
                return None;
            }
            let (t, axis) = if t0 > HIT_EPS {
                (t0, enter_axis)
            } else if t1 > HIT_EPS {
                (t1, exit_axis)
            } else {
                return None;
            };
            let mut n = Vector3::zeros();
            n[axis] = -d[axis].signum();
            Some((t, n))
        }
        Shape::Plane { normal, offset } => {
            let n = Vector3::from(*normal);
            let denom = n.dot(d);
            if denom.abs() < 1e-300 {
                return None;
            }
            let t = (offset - n.dot(o)) / denom;
            (t > HIT_EPS).then_some((t, n))
        }
    }
}

/// Ray-casts one ray per pixel center. Depth is the camera-frame z of the
/// nearest hit, 0 where nothing is hit. Object ids are primitive index + 1,
/// 0 for background. Shading is Lambertian under a directional light along
/// the viewing axis, so both eyes of a rectified rig see identical radiance.
pub fn render_analytic(scene: &AnalyticScene, camera: &Camera) -> Result<RenderedFrame> {
    if scene.primitives.is_empty() {
        return Err(Error::Empty("analytic scene"));
    }
    let k = camera.intrinsics;
    let (w, h) = (k.width as usize, k.height as usize);
    let forward = camera.pose.forward_axis();
    let origin = camera.pose.center;
    let rows: Vec<(Vec<u8>, Vec<f32>, Vec<u32>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut rgb = Vec::with_capacity(w * 3);
            let mut depth = Vec::with_capacity(w);
            let mut ids = Vec::with_capacity(w);
            for x in 0..w {
                // Unit camera-frame z, so the ray parameter is the depth.
                let dir = camera.pose.rotation * camera.pixel_ray(x as f64, y as f64);
                match scene.intersect(&origin, &dir) {
                    Some((t, i, n)) => {
                        let p = origin + dir * t;
                        let albedo = scene.primitives[i].albedo.color_at(&p);
                        let shade = scene.ambient + (1.0 - scene.ambient) * n.dot(&forward).abs();
                        rgb.extend(albedo.map(|c| to_rgb8(c * shade)));
                        depth.push(t as f32);
                        ids.push(i as u32 + 1);
                    }
                    None => {
                        rgb.extend(scene.background.map(to_rgb8));
                        depth.push(0.0);
                        ids.push(0);
                    }
                }
            }
            (rgb, depth, ids)
        })
        .collect();
    let mut rgb = Vec::with_capacity(w * h * 3);
    let mut depth = Vec::with_capacity(w * h);
    let mut ids = Vec::with_capacity(w * h);
    for (r, d, i) in rows {
        rgb.extend(r);
        depth.extend(d);
        ids.extend(i);
    }
    Ok(RenderedFrame {
        rgb: RgbImage::from_raw(k.width, k.height, rgb).expect("sized from intrinsics"),
        depth: Some(Grid { width: k.width, height: k.height, data: depth }),
        object_ids: Some(Grid { width: k.width, height: k.height, data: ids }),
        camera: *camera,
    })
}
