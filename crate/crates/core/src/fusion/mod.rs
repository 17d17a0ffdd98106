//! Volumetric fusion of masked depth frames and mesh extraction.

#[rustfmt::skip]
mod mc_tables;
pub mod mesh;
pub mod tsdf;

pub use mesh::{clean_mesh, extract_mesh, read_mesh_ply, write_mesh_ply, TriangleMesh, DEFAULT_MIN_WEIGHT};
pub use tsdf::{auto_truncation, depth_bounds, voxel_for_resolution, IntegrateStats, TsdfVolume};
