//! Surface reconstruction from stereo-rendered views.
//!
//! A scene (Gaussian splats or analytic primitives) is rendered as rectified
//! stereo pairs around each input pose, depth is recovered with census/SGM
//! matching and gated to a baseline-relative range, and the depth maps are
//! fused into a TSDF volume from which a mesh is extracted. Object masks can
//! be tracked across views to restrict fusion to one object, and the
//! evaluation module scores a mesh against a reference point cloud.

pub mod camera;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod pipeline;
pub mod ply;
pub mod raster;
pub mod render;
pub mod segmentation;
pub mod scenes;
pub mod stereo;

pub use error::{Error, Result};
