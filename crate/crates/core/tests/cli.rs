use std::path::Path;
use std::process::{Command, Output};

use stereofuse::camera::{write_camera_file, Intrinsics};
use stereofuse::evaluation::{write_point_cloud_ply, PointCloud};
use stereofuse::fusion::{write_mesh_ply, TriangleMesh};
use stereofuse::scenes::{orbit_frames, sphere_scene};

fn stereofuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stereofuse"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("STEREOFUSE_THREADS")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Small analytic scene: `n` views at 96x72.
fn small_scene(dir: &Path, n: usize) -> String {
    let intr = Intrinsics::from_hfov(96, 72, 90f64.to_radians()).unwrap();
    write_camera_file(&dir.join("cameras.txt"), &orbit_frames(n, 2.0, 20.0, intr).unwrap()).unwrap();
    std::fs::write(dir.join("scene.toml"), sphere_scene().to_toml()).unwrap();
    let cfg = dir.join("pipeline.toml");
    std::fs::write(
        &cfg,
        "[scene]\nanalytic = \"scene.toml\"\ncameras = \"cameras.txt\"\n\
         [fusion]\nresolution = 40\nmin_triangles = 10\n[evaluation]\nsamples = 3000\n[run]\noutput = \"out\"\n",
    )
    .unwrap();
    cfg.to_string_lossy().into_owned()
}

#[test]
fn render_stereo_writes_pairs_and_rig_metadata() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_scene(tmp.path(), 3);
    let o = stereofuse(&["render-stereo", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let render = tmp.path().join("out/render");
    let count = |suffix: &str| {
        std::fs::read_dir(&render).unwrap().filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().ends_with(suffix)).count()
    };
    assert_eq!(count(".png"), 6);
    assert_eq!(count("_depth.pfm"), 3);
    let rig = std::fs::read_to_string(render.join("rig.txt")).unwrap();
    assert_eq!(rig.lines().filter(|l| !l.starts_with('#')).count(), 3);
}

#[test]
fn missing_splat_file_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    small_scene(tmp.path(), 2);
    let cfg = tmp.path().join("splat.toml");
    std::fs::write(&cfg, "[scene]\nsplat = \"nowhere.ply\"\ncameras = \"cameras.txt\"\n").unwrap();
    let o = stereofuse(&["render-stereo", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere.ply"), "{}", stderr(&o));
}

#[test]
fn bad_override_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_scene(tmp.path(), 2);
    let o = stereofuse(&["pipeline", &cfg, "--set", "stereo.num_paths=3"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn eval_of_empty_mesh_fails_with_message() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_scene(dir, 2);
    let gt = dir.join("gt.ply");
    write_point_cloud_ply(&gt, &PointCloud::new(vec![nalgebra::Vector3::zeros(); 3]).unwrap()).unwrap();
    std::fs::create_dir_all(dir.join("out/fuse")).unwrap();
    write_mesh_ply(&dir.join("out/fuse/mesh.ply"), &TriangleMesh::default()).unwrap();
    std::fs::write(
        dir.join("out/fuse/volume.json"),
        r#"{"origin":[0,0,0],"voxel_size":0.1,"dims":[2,2,2],"truncation":0.4,"frames":0,"triangles_before_cleanup":0,"triangles":0}"#,
    )
    .unwrap();
    let cfg = dir.join("eval.toml");
    std::fs::write(&cfg, "[scene]\nanalytic = \"scene.toml\"\ncameras = \"cameras.txt\"\n[evaluation]\nground_truth = \"gt.ply\"\n[run]\noutput = \"out\"\n").unwrap();
    let o = stereofuse(&["eval", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("empty prediction"), "{}", stderr(&o));
}

#[test]
fn pipeline_reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_scene(tmp.path(), 6);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for (out, threads) in [(&a, "1"), (&b, "3")] {
        let o = stereofuse(&["pipeline", &cfg, "--out", out.to_str().unwrap(), "--threads", threads, "--seed", "7"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["fuse/mesh.ply", "eval/report.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    // A second run over the same directory only checks hashes.
    let o = stereofuse(&["pipeline", &cfg, "--out", a.to_str().unwrap(), "--seed", "7"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("fuse: ") && String::from_utf8_lossy(&o.stdout).contains("(up to date)"));
}

#[test]
fn convert_colmap_writes_camera_file() {
    let tmp = tempfile::tempdir().unwrap();
    let model = tmp.path().join("sparse");
    std::fs::create_dir_all(&model).unwrap();
    std::fs::write(model.join("cameras.txt"), "1 PINHOLE 640 480 500 500 320 240\n").unwrap();
    std::fs::write(
        model.join("images.txt"),
        "1 1 0 0 0 0 0 5 1 a.png\n\n2 1 0 0 0 1 0 5 1 b.png\n\n",
    )
    .unwrap();
    let out = tmp.path().join("cams/cameras.txt");
    let o = stereofuse(&["convert-colmap", model.to_str().unwrap(), out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stereofuse::camera::read_camera_file(&out).unwrap().len(), 2);

    let o = stereofuse(&["convert-colmap", tmp.path().join("missing").to_str().unwrap(), out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
