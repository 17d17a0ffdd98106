//! Built-in synthetic scenes used by the examples, tests and bundled assets.

use std::path::Path;

use nalgebra::Vector3;

use crate::camera::{write_camera_file, Camera, Frame, Intrinsics, Pose};
use crate::error::{Error, Result};
use crate::render::{Albedo, AnalyticScene, Gaussian, GaussianCloud, Primitive, Shape};

pub const SPHERE_RADIUS: f64 = 1.0;
pub const GROUND_Z: f64 = -1.0;

fn noise(rgb: [f64; 3], seed: u64) -> Albedo {
    Albedo::Noise { rgb, contrast: 0.5, frequency: 10.0, octaves: 3, seed }
}

/// Unit sphere at the origin resting on the plane `z = -1`, both textured
/// with fractal noise. Object id 1 is the sphere, 2 the ground.
pub fn sphere_scene() -> AnalyticScene {
    AnalyticScene {
        primitives: vec![
            Primitive {
                shape: Shape::Sphere { center: [0.0; 3], radius: SPHERE_RADIUS },
                albedo: noise([0.8, 0.6, 0.4], 1),
            },
            Primitive {
                shape: Shape::Plane { normal: [0.0, 0.0, 1.0], offset: GROUND_Z },
                albedo: noise([0.5, 0.55, 0.6], 2),
            },
        ],
        background: [0.0; 3],
        ambient: 0.3,
    }
}

/// `n` cameras on a horizontal ring of `distance` around the origin at
/// `elevation_deg` above the equator, all looking at the origin with +z up.
/// Ids are zero-padded indices.
pub fn orbit_frames(n: usize, distance: f64, elevation_deg: f64, intrinsics: Intrinsics) -> Result<Vec<Frame>> {
    if n == 0 || !(distance > 0.0) {
        return Err(Error::invalid("orbit needs at least one camera and a positive distance"));
    }
    let el = elevation_deg.to_radians();
    (0..n)
        .map(|i| {
            let az = std::f64::consts::TAU * i as f64 / n as f64;
            let eye = distance * Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
            let pose = Pose::look_at(eye, Vector3::zeros(), Vector3::z())?;
            Ok(Frame { id: format!("{i:03}"), camera: Camera::new(intrinsics, pose) })
        })
        .collect()
}

/// 320x240 at a 90 degree horizontal field of view.
pub fn default_intrinsics() -> Intrinsics {
    Intrinsics::from_hfov(320, 240, 90f64.to_radians()).expect("valid intrinsics")
}

/// The 24-view orbit around [`sphere_scene`].
pub fn sphere_orbit() -> Vec<Frame> {
    orbit_frames(24, 2.0, 20.0, default_intrinsics()).expect("valid orbit")
}

/// Writes `scene.toml`, `cameras.txt` and a `pipeline.toml` for the sphere
/// scene into `dir`.
pub fn write_sphere_assets(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let scene = dir.join("scene.toml");
    std::fs::write(&scene, sphere_scene().to_toml()).map_err(|e| Error::io(&scene, e))?;
    write_camera_file(&dir.join("cameras.txt"), &sphere_orbit())?;
    let cfg = dir.join("pipeline.toml");
    std::fs::write(&cfg, SPHERE_PIPELINE_TOML).map_err(|e| Error::io(&cfg, e))
}

pub const SPHERE_PIPELINE_TOML: &str = r#"[scene]
analytic = "scene.toml"
cameras = "cameras.txt"

[rig]
baseline_fraction = 0.07

[fusion]
resolution = 128
min_triangles = 100

[segmentation]
enabled = false
object_id = 1

[evaluation]
samples = 100000

[run]
seed = 0
output = "out"
"#;

/// Square wall of isotropic splats in the plane `z = depth` of the identity
/// camera, `n x n` elements spaced `spacing` apart, with random colors from
/// `seed`. Splat sigma equals the spacing so the wall is opaque.
pub fn splat_wall(n: usize, spacing: f64, depth: f64, seed: u64) -> GaussianCloud {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let half = (n as f64 - 1.0) * spacing / 2.0;
    let mut gaussians = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let p = Vector3::new(i as f64 * spacing - half, j as f64 * spacing - half, depth);
            let rgb = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
            gaussians.push(Gaussian::isotropic(p, spacing, 0.95, rgb));
        }
    }
    GaussianCloud { gaussians, sh_degree: 0 }
}
