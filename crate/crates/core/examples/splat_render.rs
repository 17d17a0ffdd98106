//! Renders a Gaussian-splat PLY from a camera file, or a generated splat wall
//! when no arguments are given.
//!
//! ```text
//! cargo run --release --example splat_render -- scene.ply cameras.txt out_dir
//! ```

use std::path::PathBuf;

use stereofuse::camera::{read_camera_file, Camera, Intrinsics, Pose};
use stereofuse::raster::write_rgb_png;
use stereofuse::render::{load_gaussian_ply, render_splats, write_gaussian_ply};
use stereofuse::scenes::splat_wall;

fn main() -> stereofuse::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (cloud, cameras, out) = if let [ply, cams, out] = args.as_slice() {
        let frames = read_camera_file(cams.as_ref())?;
        (load_gaussian_ply(ply.as_ref())?, frames.into_iter().map(|f| (f.id, f.camera)).collect(), PathBuf::from(out))
    } else {
        let out = PathBuf::from(args.first().map(String::as_str).unwrap_or("splat_render"));
        let cloud = splat_wall(120, 0.03, 2.0, 1);
        std::fs::create_dir_all(&out).ok();
        write_gaussian_ply(&out.join("wall.ply"), &cloud)?;
        let cam = Camera::new(Intrinsics::from_hfov(320, 240, 90f64.to_radians())?, Pose::identity());
        (cloud, vec![("wall".to_string(), cam)], out)
    };
    std::fs::create_dir_all(&out).ok();
    for (id, cam) in cameras {
        let (frame, stats) = render_splats(&cloud, &cam, [0.0; 3])?;
        write_rgb_png(&out.join(format!("{id}.png")), &frame.rgb)?;
        println!("{id}: {} drawn, {} culled, {} skipped", stats.drawn, stats.culled, stats.nan_skipped);
    }
    Ok(())
}
