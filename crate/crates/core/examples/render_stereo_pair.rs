//! Renders one stereo pair of the analytic sphere scene, with oracle depth.
//!
//! ```text
//! cargo run --release --example render_stereo_pair -- out_dir
//! ```

use std::path::PathBuf;

use stereofuse::camera::{baseline_from_radius, make_stereo_rig, scene_radius, Pose};
use stereofuse::raster::{write_pfm, write_rgb_png};
use stereofuse::render::render_analytic;
use stereofuse::scenes::{sphere_orbit, sphere_scene};

fn main() -> stereofuse::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "stereo_pair".into());
    std::fs::create_dir_all(&out).expect("output directory");
    let frames = sphere_orbit();
    let poses: Vec<Pose> = frames.iter().map(|f| f.camera.pose).collect();
    let baseline = baseline_from_radius(scene_radius(&poses)?, 0.07)?;
    let cam = frames[0].camera;
    let rig = make_stereo_rig(cam.pose, cam.intrinsics, baseline)?;
    let scene = sphere_scene();
    let left = render_analytic(&scene, &rig.left_camera())?;
    let right = render_analytic(&scene, &rig.right_camera())?;
    write_rgb_png(&out.join("left.png"), &left.rgb)?;
    write_rgb_png(&out.join("right.png"), &right.rgb)?;
    write_pfm(&out.join("left_depth.pfm"), left.depth.as_ref().expect("analytic renders carry depth"))?;
    println!("baseline {baseline:.4}, fx {}, images in {}", cam.intrinsics.fx, out.display());
    Ok(())
}
