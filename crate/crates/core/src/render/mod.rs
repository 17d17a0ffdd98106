//! Image synthesis for stereo pairs: Gaussian-splat forward rendering and the
//! analytic ray-cast oracle.

use image::RgbImage;

use crate::camera::Camera;
use crate::raster::Grid;

pub mod analytic;
pub mod splat;

pub use analytic::{render_analytic, Albedo, AnalyticScene, Primitive, Shape};
pub use splat::{load_gaussian_ply, render_splats, write_gaussian_ply, Gaussian, GaussianCloud, SplatStats};

#[derive(Clone, Debug)]
pub struct RenderedFrame {
    pub rgb: RgbImage,
    /// Camera-frame depth, 0 where nothing was hit. Oracle renders only.
    pub depth: Option<Grid<f32>>,
    /// Primitive index + 1 per pixel, 0 for background. Oracle renders only.
    pub object_ids: Option<Grid<u32>>,
    pub camera: Camera,
}

#[inline]
pub(crate) fn to_rgb8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
