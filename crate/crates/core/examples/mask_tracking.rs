//! Tracks the sphere's mask around the orbit with the identity refiner and
//! reports the IoU against the renderer's object ids.
//!
//! ```text
//! cargo run --release --example mask_tracking
//! ```

use stereofuse::raster::Grid;
use stereofuse::render::render_analytic;
use stereofuse::scenes::{sphere_orbit, sphere_scene};
use stereofuse::segmentation::{track_object, IdentityRefiner, TrackInput, DEFAULT_DILATION_RADIUS, DEFAULT_SEED_COUNT};
use stereofuse::stereo::DepthFrame;

fn main() -> stereofuse::Result<()> {
    let scene = sphere_scene();
    let frames = sphere_orbit();
    let renders = frames.iter().map(|f| render_analytic(&scene, &f.camera)).collect::<stereofuse::Result<Vec<_>>>()?;
    let truth: Vec<_> = renders
        .iter()
        .map(|r| {
            let ids = r.object_ids.as_ref().expect("object ids");
            Grid { width: ids.width, height: ids.height, data: ids.data.iter().map(|&v| v == 1).collect() }
        })
        .collect();
    let depths: Vec<_> = renders
        .iter()
        .zip(&frames)
        .map(|(r, f)| DepthFrame::from_oracle(r.depth.as_ref().expect("oracle depth"), f.camera, 0.1316))
        .collect();
    let images: Vec<_> = renders.iter().map(|r| r.rgb.clone()).collect();
    let ids: Vec<String> = frames.iter().map(|f| f.id.clone()).collect();
    let input = TrackInput { ids: &ids, images: &images, depths: &depths };
    let track = track_object(&input, &truth[0], &IdentityRefiner, DEFAULT_DILATION_RADIUS, DEFAULT_SEED_COUNT)?;
    for (i, m) in track.masks.iter().enumerate() {
        println!("frame {}: {} px, IoU {:.3}, seeds {:?}", ids[i], m.count(), m.iou(&truth[i]), track.seeds[i]);
    }
    Ok(())
}
