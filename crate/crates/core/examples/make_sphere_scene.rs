//! Writes the textured-sphere scene, its 24-view orbit and a pipeline config.
//!
//! ```text
//! cargo run --example make_sphere_scene -- assets/sphere
//! ```

use std::path::PathBuf;

fn main() -> stereofuse::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("sphere_scene"));
    stereofuse::scenes::write_sphere_assets(&dir)?;
    println!("wrote scene.toml, cameras.txt and pipeline.toml to {}", dir.display());
    Ok(())
}
