//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! a summary. A failing criterion is reported, not hidden: the process only
//! exits non-zero if a check cannot run at all.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use image::GrayImage;
use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stereofuse::camera::{make_stereo_rig, Camera, Intrinsics, Pose};
use stereofuse::config::{Overrides, PipelineConfig};
use stereofuse::evaluation::{icp_align, read_report, PointCloud};
use stereofuse::fusion::{extract_mesh, TsdfVolume};
use stereofuse::pipeline::{cmd_pipeline, read_volume_info, with_threads, Stage, Workspace};
use stereofuse::raster::{Grid, Mask};
use stereofuse::render::{render_analytic, render_splats, Albedo, AnalyticScene, Gaussian, GaussianCloud, Primitive, Shape};
use stereofuse::scenes::{sphere_orbit, sphere_scene, splat_wall, write_sphere_assets};
use stereofuse::segmentation::{track_object, IdentityRefiner, TrackInput};
use stereofuse::stereo::{depth_range_mask, match_sgm, stereo_depth, to_gray, DepthFrame, StereoParams};

type Check = (bool, String);

fn sphere_config(dir: &Path, out: &str, threads: usize) -> PipelineConfig {
    write_sphere_assets(dir).unwrap();
    let ov = Overrides { threads: Some(threads), output: Some(dir.join(out)), ..Default::default() };
    PipelineConfig::load(&dir.join("pipeline.toml"), &ov).unwrap()
}

// 1 ---------------------------------------------------------------------------

fn oracle_end_to_end(dir: &Path) -> Check {
    let cfg = sphere_config(dir, "single", 1);
    let t = Instant::now();
    cmd_pipeline(&cfg).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let ws = Workspace::new(&cfg.run.output);
    let voxel = read_volume_info(&ws.file(Stage::Fuse, "volume.json")).unwrap().voxel_size;
    let r = read_report(&ws.report()).unwrap();
    let ok = r.f1 >= 0.90 && r.chamfer <= 2.0 * voxel && secs < 300.0 && (r.tau - 2.0 * voxel).abs() < 1e-12;
    (ok, format!("F1 {:.4} (>= 0.90), Chamfer {:.5} (<= {:.5}), {secs:.1} s single-threaded (< 300)", r.f1, r.chamfer, 2.0 * voxel))
}

// 2 ---------------------------------------------------------------------------

fn frontal_plane(z: f64) -> AnalyticScene {
    AnalyticScene {
        primitives: vec![Primitive {
            shape: Shape::Plane { normal: [0.0, 0.0, 1.0], offset: z },
            albedo: Albedo::Noise { rgb: [0.7, 0.7, 0.7], contrast: 0.5, frequency: 10.0, octaves: 3, seed: 5 },
        }],
        background: [0.0; 3],
        ambient: 0.3,
    }
}

fn depth_error_fit() -> Check {
    let intr = Intrinsics::from_hfov(320, 240, 90f64.to_radians()).unwrap();
    let b = 0.1;
    let params = StereoParams::for_focal(intr.fx);
    let mut zs = Vec::new();
    let mut rmses = Vec::new();
    for k in [2.0, 5.0, 10.0] {
        let z = k * b;
        let rig = make_stereo_rig(Pose::identity(), intr, b).unwrap();
        let scene = frontal_plane(z);
        let l = render_analytic(&scene, &rig.left_camera()).unwrap();
        let r = render_analytic(&scene, &rig.right_camera()).unwrap();
        let (d, _) = stereo_depth(&l.rgb, &r.rgb, rig.left_camera(), b, &params).unwrap();
        // Only columns whose true match lies inside the right image.
        let min_x = (intr.fx * b / z).ceil() as u32 + 3;
        let mut se = 0.0;
        let mut n = 0usize;
        for y in 0..intr.height {
            for x in min_x..intr.width {
                let i = d.depth.index(x, y);
                if d.valid.data[i] && !d.occlusion_mask.data[i] {
                    se += (d.depth.data[i] - z).powi(2);
                    n += 1;
                }
            }
        }
        zs.push(z);
        rmses.push((se / n as f64).sqrt());
    }
    let c = zs.iter().zip(&rmses).map(|(z, e)| e * z * z).sum::<f64>() / zs.iter().map(|z| z.powi(4)).sum::<f64>();
    let mean = rmses.iter().sum::<f64>() / 3.0;
    let ss_tot: f64 = rmses.iter().map(|e| (e - mean).powi(2)).sum();
    let ss_res: f64 = zs.iter().zip(&rmses).map(|(z, e)| (e - c * z * z).powi(2)).sum();
    let r2 = 1.0 - ss_res / ss_tot;
    let c0 = params.lr_threshold / (intr.fx * b);
    let ratio = c / c0;
    let ok = r2 >= 0.9 && (1.0 / 3.0..=3.0).contains(&ratio);
    (
        ok,
        format!(
            "RMSE {:.2e}/{:.2e}/{:.2e} at 2B/5B/10B, c = {c:.3e} = {ratio:.3} x lr/(fx B) (within 3x), R^2 = {r2:.4} (>= 0.9)",
            rmses[0], rmses[1], rmses[2]
        ),
    )
}

// 3 ---------------------------------------------------------------------------

fn range_gate_is_exact() -> Check {
    let frames = sphere_orbit();
    let scene = sphere_scene();
    let b = 0.131557;
    let mut outside = 0usize;
    let mut checked = 0usize;
    for f in frames.iter().step_by(6) {
        let rig = make_stereo_rig(f.camera.pose, f.camera.intrinsics, b).unwrap();
        let l = render_analytic(&scene, &rig.left_camera()).unwrap();
        let r = render_analytic(&scene, &rig.right_camera()).unwrap();
        let (d, _) = stereo_depth(&l.rgb, &r.rgb, f.camera, b, &StereoParams::for_focal(f.camera.intrinsics.fx)).unwrap();
        for i in 0..d.depth.len() {
            if d.is_final_valid(i) {
                checked += 1;
                let z = d.depth.data[i];
                outside += !(2.0 * b..=10.0 * b).contains(&z) as usize;
            }
        }
    }
    // Depth values straddling and sitting exactly on both bounds.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut data: Vec<f64> = (0..10_000).map(|_| rng.random_range(0.0..15.0)).collect();
    data.extend([2.0, 10.0, 2.0 - 1e-12, 10.0 + 1e-12]);
    let n = data.len() as u32;
    let grid = Grid { width: n, height: 1, data };
    let gate = depth_range_mask(&grid, 1.0).unwrap();
    let synthetic_outside = grid.data.iter().zip(&gate.data).filter(|(z, &g)| g && !(2.0..=10.0).contains(*z)).count();
    let synthetic_wrong_reject = grid.data.iter().zip(&gate.data).filter(|(z, &g)| !g && (2.0..=10.0).contains(*z)).count();
    let ok = outside == 0 && synthetic_outside == 0 && synthetic_wrong_reject == 0;
    (ok, format!("{outside} of {checked} gated stereo pixels outside [2B, 10B]; synthetic: {synthetic_outside} leaked, {synthetic_wrong_reject} wrongly rejected"))
}

// 4 ---------------------------------------------------------------------------

fn brute_census(img: &GrayImage) -> Vec<u64> {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let px = |x: i64, y: i64| img.get_pixel(x.clamp(0, w - 1) as u32, y.clamp(0, h - 1) as u32).0[0];
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let mut bits = 0u64;
            for dy in -2..=2 {
                for dx in -3..=3 {
                    if (dx, dy) != (0, 0) {
                        bits = (bits << 1) | (px(x + dx, y + dy) < px(x, y)) as u64;
                    }
                }
            }
            out.push(bits);
        }
    }
    out
}

/// Lowest cost wins (lowest disparity on ties); rejected when no disparity
/// more than one step away exists or when the best is not clearly below it;
/// parabola refinement when both neighbors exist and the curvature is positive.
fn brute_wta(costs: &[u32], ratio: f64) -> Option<f32> {
    let mut best = 0;
    for d in 1..costs.len() {
        if costs[d] < costs[best] {
            best = d;
        }
    }
    let second = (0..costs.len()).filter(|&d| d.abs_diff(best) > 1).map(|d| costs[d]).min()?;
    if costs[best] as f64 >= ratio * second as f64 {
        return None;
    }
    let mut disp = best as f64;
    if best >= 1 && best + 1 < costs.len() {
        let (a, m, c) = (costs[best - 1] as f64, costs[best] as f64, costs[best + 1] as f64);
        if a - 2.0 * m + c > 0.0 {
            disp += (a - c) / (2.0 * (a - 2.0 * m + c));
        }
    }
    Some(disp as f32)
}

fn census_wta_equivalence() -> Check {
    let (w, h, maxd) = (32u32, 32u32, 16u32);
    let params = StereoParams { max_disparity: maxd, num_paths: 0, ..StereoParams::default() };
    let mut mismatches = 0usize;
    let mut valid_pixels = 0usize;
    for trial in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + trial);
        let left = GrayImage::from_fn(w, h, |_, _| image::Luma([rng.random()]));
        let right = GrayImage::from_fn(w, h, |_, _| image::Luma([rng.random()]));
        let (dl, dr) = match_sgm(&left, &right, &params).unwrap();
        let (cl, cr) = (brute_census(&left), brute_census(&right));
        for y in 0..h as usize {
            for x in 0..w as usize {
                let i = y * w as usize + x;
                let lcost: Vec<u32> = (0..=(maxd as usize).min(x))
                    .map(|d| (cl[i] ^ cr[i - d]).count_ones())
                    .collect();
                let rcost: Vec<u32> = (0..=(maxd as usize).min(w as usize - 1 - x))
                    .map(|d| (cr[i] ^ cl[i + d]).count_ones())
                    .collect();
                for (costs, map) in [(lcost, &dl), (rcost, &dr)] {
                    let expect = brute_wta(&costs, params.uniqueness_ratio);
                    let got = map.valid.data[i].then(|| map.values.data[i]);
                    valid_pixels += got.is_some() as usize;
                    if expect.map(f32::to_bits) != got.map(f32::to_bits) {
                        mismatches += 1;
                    }
                }
            }
        }
    }
    (mismatches == 0, format!("{mismatches} mismatching pixels over 10 pairs x 2 maps ({valid_pixels} valid)"))
}

// 5 ---------------------------------------------------------------------------

fn oracle_frames(step: usize) -> Vec<DepthFrame> {
    let scene = sphere_scene();
    sphere_orbit()
        .iter()
        .step_by(step)
        .map(|f| DepthFrame::from_oracle(render_analytic(&scene, &f.camera).unwrap().depth.as_ref().unwrap(), f.camera, 0.131557))
        .collect()
}

fn tsdf_order_invariance() -> Check {
    let frames = oracle_frames(3);
    let fresh = || TsdfVolume::covering(Vector3::repeat(-1.2), Vector3::repeat(1.2), 0.03, 0.12).unwrap();
    let mut reference = fresh();
    for f in &frames {
        reference.integrate(f, None).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let mut order: Vec<usize> = (0..frames.len()).collect();
        order.shuffle(&mut rng);
        let mut vol = fresh();
        for &k in &order {
            vol.integrate(&frames[k], None).unwrap();
        }
        let diff = vol.tsdf.iter().zip(&reference.tsdf).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(diff);
    }
    (worst < 1e-6, format!("{} frames, 5 shuffled orders, max |tsdf difference| = {worst:.2e} (< 1e-6)", frames.len()))
}

// 6 ---------------------------------------------------------------------------

fn marching_cubes_sphere() -> Check {
    let voxel = 0.05;
    let mut vol = TsdfVolume::covering(Vector3::repeat(-1.3), Vector3::repeat(1.3), voxel, 4.0 * voxel).unwrap();
    let [nx, ny, nz] = vol.dims;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let idx = vol.index(i, j, k);
                let sdf = vol.point(i, j, k).norm() - 1.0;
                vol.tsdf[idx] = (sdf / vol.truncation).clamp(-1.0, 1.0);
                vol.weight[idx] = 1.0;
            }
        }
    }
    let mesh = extract_mesh(&vol, 1.0);
    let worst = mesh.vertices.iter().map(|v| (v.norm() - 1.0).abs()).fold(0.0, f64::max);
    let ok = !mesh.vertices.is_empty() && worst <= voxel;
    (ok, format!("{} vertices, max |r - 1| = {worst:.4} (<= {voxel})", mesh.vertices.len()))
}

// 7 ---------------------------------------------------------------------------

fn icp_recovery() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut recovered = 0;
    let mut worst = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let src = PointCloud::new(
            (0..1000)
                .map(|_| Vector3::new(rng.random::<f64>(), 2.0 * rng.random::<f64>(), 3.0 * rng.random::<f64>()))
                .collect(),
        )
        .unwrap();
        let axis = Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
        let angle = rng.random_range(0.0..30f64.to_radians());
        let rotation = UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        let shift = Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
        let truth = Isometry3::from_parts(Translation3::from(shift), rotation);
        let dst = src.transformed(&truth);
        let est = icp_align(&src, &dst, 50, 1e-9).unwrap().transform;
        let rot_err = est.rotation.angle_to(&truth.rotation);
        let trans_err = (est.translation.vector - truth.translation.vector).norm();
        worst = (worst.0.max(rot_err), worst.1.max(trans_err));
        recovered += (rot_err < 1e-3 && trans_err < 1e-3) as usize;
    }
    (recovered == 20, format!("{recovered}/20 recovered; worst rotation error {:.2e} rad, translation {:.2e}", worst.0, worst.1))
}

// 8 ---------------------------------------------------------------------------

fn segmentation_track() -> Check {
    let scene = sphere_scene();
    let frames = sphere_orbit();
    let mut images = Vec::new();
    let mut depths = Vec::new();
    let mut truth: Vec<Mask> = Vec::new();
    for f in &frames {
        let r = render_analytic(&scene, &f.camera).unwrap();
        depths.push(DepthFrame::from_oracle(r.depth.as_ref().unwrap(), f.camera, 0.131557));
        let ids = r.object_ids.unwrap();
        truth.push(Grid { width: ids.width, height: ids.height, data: ids.data.iter().map(|&v| v == 1).collect() });
        images.push(r.rgb);
    }
    let ids: Vec<String> = frames.iter().map(|f| f.id.clone()).collect();
    let input = TrackInput { ids: &ids, images: &images, depths: &depths };
    let track = track_object(&input, &truth[0], &IdentityRefiner, 10, 5).unwrap();
    let ious: Vec<f64> = track.masks.iter().zip(&truth).map(|(m, t)| m.iou(t)).collect();
    let (worst_frame, worst) = ious.iter().enumerate().fold((0, 1.0), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
    let ok = ious.len() == 24 && worst >= 0.7;
    (ok, format!("24 frames, min IoU {worst:.3} at frame {worst_frame} (>= 0.7), final {:.3}", ious[23]))
}

// 9 ---------------------------------------------------------------------------

fn determinism(dir: &Path) -> Check {
    let single = sphere_config(dir, "single", 1);
    if !Workspace::new(&single.run.output).mesh().is_file() {
        cmd_pipeline(&single).unwrap();
    }
    let multi = sphere_config(dir, "multi", 4);
    cmd_pipeline(&multi).unwrap();
    let read = |c: &PipelineConfig, p: fn(&Workspace) -> std::path::PathBuf| std::fs::read(p(&Workspace::new(&c.run.output))).unwrap();
    let mesh_same = read(&single, Workspace::mesh) == read(&multi, Workspace::mesh);
    let report_same = read(&single, Workspace::report) == read(&multi, Workspace::report);
    let bytes = read(&single, Workspace::mesh).len();
    (mesh_same && report_same, format!("1 vs 4 threads: mesh ({bytes} bytes) identical = {mesh_same}, report identical = {report_same}"))
}

// 10 --------------------------------------------------------------------------

fn random_cloud(n: usize, seed: u64) -> GaussianCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaussians = (0..n)
        .map(|_| {
            let mut g = Gaussian::isotropic(
                Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(2.0..4.0)),
                0.1,
                rng.random_range(0.2..0.95),
                [rng.random(), rng.random(), rng.random()],
            );
            g.scale = Vector3::new(rng.random_range(0.02..0.3), rng.random_range(0.02..0.3), rng.random_range(0.02..0.3));
            g.rotation = UnitQuaternion::from_euler_angles(rng.random(), rng.random(), rng.random());
            for band in g.sh.iter_mut().skip(1) {
                *band = [rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)];
            }
            g
        })
        .collect();
    GaussianCloud { gaussians, sh_degree: 3 }
}

fn splat_sanity() -> Check {
    let intr = Intrinsics::from_hfov(320, 240, 90f64.to_radians()).unwrap();
    let cam = Camera::new(intr, Pose::identity());
    let cloud = random_cloud(100, 4);
    let render = |threads| with_threads(threads, || render_splats(&cloud, &cam, [0.0; 3]).unwrap().0.rgb).unwrap();
    let a = render(1);
    let deterministic = a == render(1) && a == render(4);

    let (z, b) = (2.0, 0.2);
    let wall = splat_wall(150, 0.03, z, 8);
    let rig = make_stereo_rig(Pose::identity(), intr, b).unwrap();
    let l = render_splats(&wall, &rig.left_camera(), [0.0; 3]).unwrap().0;
    let r = render_splats(&wall, &rig.right_camera(), [0.0; 3]).unwrap().0;
    let params = StereoParams::for_focal(intr.fx);
    let (dl, dr) = match_sgm(&to_gray(&l.rgb), &to_gray(&r.rgb), &params).unwrap();
    let occluded = stereofuse::stereo::occlusion_mask(&dl, &dr, params.lr_threshold).unwrap();
    let expect = intr.fx * b / z;
    let mut valid = 0usize;
    let mut close = 0usize;
    for i in 0..dl.values.len() {
        if dl.valid.data[i] && !occluded.data[i] {
            valid += 1;
            close += ((dl.values.data[i] as f64 - expect).abs() <= 0.5) as usize;
        }
    }
    let frac = close as f64 / valid.max(1) as f64;
    let ok = deterministic && valid > 0 && frac >= 0.8;
    (
        ok,
        format!("100-splat render identical across runs and thread counts = {deterministic}; wall: {:.1}% of {valid} valid pixels within 0.5 px of {expect} (>= 80%)", 100.0 * frac),
    )
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let dir = tmp.path().to_path_buf();
    let criteria: Vec<(&str, Box<dyn Fn() -> Check>)> = vec![
        ("oracle end-to-end reconstruction", Box::new(|| oracle_end_to_end(&dir))),
        ("depth error grows as c * Z^2", Box::new(depth_error_fit)),
        ("depth range gate is exact", Box::new(range_gate_is_exact)),
        ("census WTA equals brute force", Box::new(census_wta_equivalence)),
        ("TSDF integration order invariance", Box::new(tsdf_order_invariance)),
        ("marching cubes on an exact sphere", Box::new(marching_cubes_sphere)),
        ("ICP recovers rigid transforms", Box::new(icp_recovery)),
        ("segmentation track IoU", Box::new(segmentation_track)),
        ("determinism across thread counts", Box::new(|| determinism(&dir))),
        ("splat renderer sanity", Box::new(splat_sanity)),
    ];
    let mut passed = 0;
    let mut crashed = 0;
    for (n, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let (ok, detail) = match catch_unwind(AssertUnwindSafe(check)) {
            Ok(r) => r,
            Err(e) => {
                crashed += 1;
                let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
                (false, format!("panicked: {}", msg.unwrap_or_default()))
            }
        };
        passed += ok as usize;
        println!("{} {:>2} {name}: {detail} [{:.1}s]", if ok { "PASS" } else { "FAIL" }, n + 1, t.elapsed().as_secs_f64());
    }
    println!("acceptance: {passed}/{} criteria passed", criteria.len());
    if crashed > 0 {
        std::process::exit(1);
    }
}
