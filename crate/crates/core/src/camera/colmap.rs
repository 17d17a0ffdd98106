//! Conversion from COLMAP text models (`cameras.txt`, `images.txt`).
//!
//! `cameras.txt`: `CAMERA_ID MODEL WIDTH HEIGHT PARAMS[]`.
//! `images.txt`: two lines per image, `IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME`
//! followed by the 2D point list (ignored). The stored pose maps world to
//! camera; it is inverted into our camera-to-world convention here.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use super::{Camera, Frame, Intrinsics, Pose};
use crate::error::{Error, Result};

fn parse_cameras(text: &str) -> Result<BTreeMap<u32, Intrinsics>> {
    let mut cams = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::format("cameras.txt", format!("line {}: {msg}", lineno + 1));
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() < 5 {
            return Err(err("too few fields".into()));
        }
        let id: u32 = t[0].parse().map_err(|_| err(format!("bad camera id {:?}", t[0])))?;
        let width: u32 = t[2].parse().map_err(|_| err("bad width".into()))?;
        let height: u32 = t[3].parse().map_err(|_| err("bad height".into()))?;
        let params: Vec<f64> = t[4..]
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| err(format!("bad parameter {s:?}"))))
            .collect::<Result<_>>()?;
        let (fx, fy, cx, cy) = match (t[1], params.as_slice()) {
            ("SIMPLE_PINHOLE", [f, cx, cy]) => (*f, *f, *cx, *cy),
            ("PINHOLE", [fx, fy, cx, cy]) => (*fx, *fy, *cx, *cy),
            (model, _) => {
                return Err(err(format!(
                    "camera model {model} with {} parameters is not supported (undistort to PINHOLE first)",
                    params.len()
                )))
            }
        };
        // COLMAP places pixel centers at half-integers.
        let intr = Intrinsics::new(fx, fy, cx - 0.5, cy - 0.5, width, height).map_err(|e| err(e.to_string()))?;
        cams.insert(id, intr);
    }
    Ok(cams)
}

/// Converts COLMAP text models into frames sorted by image name. The frame id
/// is the image name without its extension.
pub fn convert_colmap_text(cameras_txt: &str, images_txt: &str) -> Result<Vec<Frame>> {
    let cams = parse_cameras(cameras_txt)?;
    let mut frames = Vec::new();
    let mut lines = images_txt
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim_start().starts_with('#'));
    while let Some((lineno, line)) = lines.next() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::format("images.txt", format!("line {}: {msg}", lineno + 1));
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() < 10 {
            return Err(err(format!("expected 10 fields, found {}", t.len())));
        }
        let num = |i: usize| t[i].parse::<f64>().map_err(|_| err(format!("bad number {:?}", t[i])));
        let q = UnitQuaternion::from_quaternion(Quaternion::new(num(1)?, num(2)?, num(3)?, num(4)?));
        let trans = Vector3::new(num(5)?, num(6)?, num(7)?);
        let cam_id: u32 = t[8].parse().map_err(|_| err("bad camera id".into()))?;
        let intr = *cams.get(&cam_id).ok_or_else(|| err(format!("unknown camera id {cam_id}")))?;
        let world_to_cam = q.to_rotation_matrix().into_inner();
        let rotation = world_to_cam.transpose();
        let center = -(rotation * trans);
        let pose = Pose::new(rotation, center).map_err(|e| err(e.to_string()))?;
        let name = t[9..].join(" ");
        let id = Path::new(&name)
            .file_stem()
            .map(|s| s.to_string_lossy().replace(char::is_whitespace, "_"))
            .unwrap_or_else(|| t[0].to_string());
        frames.push((name, Frame { id, camera: Camera::new(intr, pose) }));
        // The following line lists 2D observations.
        lines.next();
    }
    frames.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(frames.into_iter().map(|(_, f)| f).collect())
}

pub fn convert_colmap_dir(dir: &Path) -> Result<Vec<Frame>> {
    let read = |name: &str| {
        let p = dir.join(name);
        std::fs::read_to_string(&p).map_err(|e| Error::io(p, e))
    };
    convert_colmap_text(&read("cameras.txt")?, &read("images.txt")?)
}
