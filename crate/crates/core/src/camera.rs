//! Pinhole cameras, poses and the stereo-calibrated virtual rig.
//!
//! Convention: a [`Pose`] stores the camera-to-world rotation and the camera
//! center in world coordinates. In the camera frame +z looks forward, +x points
//! right and +y points down. Pixel centers sit at integer coordinates.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub mod colmap;

/// Default fraction of the scene radius used as the stereo baseline.
pub const DEFAULT_BASELINE_FRACTION: f64 = 0.07;

const ORTHONORMAL_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::invalid(format!("focal lengths must be positive, got {fx}, {fy}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::invalid("image size must be nonzero"));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(Error::invalid(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(Self { fx, fy, cx, cy, width, height })
    }

    /// Intrinsics with a centered principal point and the given horizontal
    /// field of view (radians), square pixels.
    pub fn from_hfov(width: u32, height: u32, hfov: f64) -> Result<Self> {
        let fx = (width as f64 / 2.0) / (hfov / 2.0).tan();
        Self::new(
            fx,
            fx,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
        )
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// Camera-to-world rigid pose.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub center: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, center: Vector3<f64>) -> Result<Self> {
        let gram = rotation.transpose() * rotation;
        if (gram - Matrix3::identity()).abs().max() > ORTHONORMAL_TOL {
            return Err(Error::invalid("rotation is not orthonormal"));
        }
        if (rotation.determinant() - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::invalid("rotation determinant is not +1"));
        }
        if !center.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid("camera center is not finite"));
        }
        Ok(Self { rotation, center })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), center: Vector3::zeros() }
    }

    /// Camera at `eye` looking at `target`, with image-down roughly along
    /// `-up`.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self> {
        let forward = target - eye;
        if forward.norm() < 1e-12 {
            return Err(Error::invalid("look_at: eye and target coincide"));
        }
        let forward = forward.normalize();
        let right = forward.cross(&up);
        if right.norm() < 1e-9 {
            return Err(Error::invalid("look_at: up is parallel to the viewing direction"));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_columns(&[right, down, forward]);
        Self::new(rotation, eye)
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.center)
    }

    pub fn camera_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.center
    }

    /// Local +x axis expressed in world coordinates.
    pub fn right_axis(&self) -> Vector3<f64> {
        self.rotation.column(0).into_owned()
    }

    /// Viewing direction (+z) in world coordinates.
    pub fn forward_axis(&self) -> Vector3<f64> {
        self.rotation.column(2).into_owned()
    }
}

/// Intrinsics plus pose.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

impl Camera {
    pub fn new(intrinsics: Intrinsics, pose: Pose) -> Self {
        Self { intrinsics, pose }
    }

    pub fn project(&self, point: &Vector3<f64>) -> Result<Projection> {
        project(&self.intrinsics, &self.pose, point)
    }

    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Result<Vector3<f64>> {
        unproject(&self.intrinsics, &self.pose, u, v, depth)
    }

    /// Camera-frame ray direction through pixel `(u, v)` with unit z.
    pub fn pixel_ray(&self, u: f64, v: f64) -> Vector3<f64> {
        let k = &self.intrinsics;
        Vector3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0)
    }
}

/// Pixel position and camera-frame depth of a projected point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

pub fn project(intr: &Intrinsics, pose: &Pose, point: &Vector3<f64>) -> Result<Projection> {
    let p = pose.world_to_camera(point);
    if p.z <= 0.0 {
        return Err(Error::BehindCamera(p.z));
    }
    Ok(Projection {
        u: intr.fx * p.x / p.z + intr.cx,
        v: intr.fy * p.y / p.z + intr.cy,
        depth: p.z,
    })
}

pub fn unproject(intr: &Intrinsics, pose: &Pose, u: f64, v: f64, depth: f64) -> Result<Vector3<f64>> {
    if !(depth > 0.0) {
        return Err(Error::invalid(format!("unproject needs positive depth, got {depth}")));
    }
    let p = Vector3::new((u - intr.cx) / intr.fx * depth, (v - intr.cy) / intr.fy * depth, depth);
    Ok(pose.camera_to_world(&p))
}

/// Largest distance from the centroid of the camera centers to any center.
pub fn scene_radius(poses: &[Pose]) -> Result<f64> {
    if poses.len() < 2 {
        return Err(Error::InsufficientPoses(poses.len()));
    }
    let centroid = poses.iter().fold(Vector3::zeros(), |acc, p| acc + p.center) / poses.len() as f64;
    Ok(poses.iter().map(|p| (p.center - centroid).norm()).fold(0.0, f64::max))
}

pub fn baseline_from_radius(radius: f64, fraction: f64) -> Result<f64> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::invalid(format!("scene radius must be positive, got {radius}")));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("baseline fraction must be in (0, 1], got {fraction}")));
    }
    Ok(radius * fraction)
}

/// Rectified stereo pair sharing intrinsics and orientation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StereoRig {
    pub intrinsics: Intrinsics,
    pub left: Pose,
    pub right: Pose,
    pub baseline: f64,
}

impl StereoRig {
    pub fn left_camera(&self) -> Camera {
        Camera::new(self.intrinsics, self.left)
    }

    pub fn right_camera(&self) -> Camera {
        Camera::new(self.intrinsics, self.right)
    }
}

/// Keeps the left eye at `left` and shifts the right eye by `baseline` along
/// the left camera's local +x axis.
pub fn make_stereo_rig(left: Pose, intr: Intrinsics, baseline: f64) -> Result<StereoRig> {
    if !(baseline > 0.0 && baseline.is_finite()) {
        return Err(Error::invalid(format!("baseline must be positive, got {baseline}")));
    }
    let right = Pose { rotation: left.rotation, center: left.center + left.right_axis() * baseline };
    Ok(StereoRig { intrinsics: intr, left, right, baseline })
}

/// One entry of a camera file.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub id: String,
    pub camera: Camera,
}

/// Parses the plain-text camera file: one frame per line,
/// `frame_id fx fy cx cy width height r11 r12 r13 r21 r22 r23 r31 r32 r33 cx cy cz`
/// with a camera-to-world rotation. Blank lines and `#` comments are skipped.
pub fn parse_camera_file(text: &str) -> Result<Vec<Frame>> {
    let mut frames = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::format("camera file", format!("line {}: {msg}", lineno + 1));
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 19 {
            return Err(err(format!("expected 19 fields, found {}", tokens.len())));
        }
        let num = |i: usize| -> Result<f64> {
            tokens[i].parse::<f64>().map_err(|_| err(format!("bad number {:?}", tokens[i])))
        };
        let int = |i: usize| -> Result<u32> {
            tokens[i].parse::<u32>().map_err(|_| err(format!("bad integer {:?}", tokens[i])))
        };
        let intrinsics = Intrinsics::new(num(1)?, num(2)?, num(3)?, num(4)?, int(5)?, int(6)?)
            .map_err(|e| err(e.to_string()))?;
        let mut r = [0.0; 9];
        for (k, slot) in r.iter_mut().enumerate() {
            *slot = num(7 + k)?;
        }
        let rotation = Matrix3::from_row_slice(&r);
        let center = Vector3::new(num(16)?, num(17)?, num(18)?);
        let pose = Pose::new(rotation, center).map_err(|e| err(e.to_string()))?;
        frames.push(Frame { id: tokens[0].to_string(), camera: Camera::new(intrinsics, pose) });
    }
    Ok(frames)
}

pub fn format_camera_file(frames: &[Frame]) -> String {
    let mut out = String::from("# frame_id fx fy cx cy width height r11 r12 r13 r21 r22 r23 r31 r32 r33 cx cy cz\n");
    for f in frames {
        let k = &f.camera.intrinsics;
        let r = &f.camera.pose.rotation;
        let c = &f.camera.pose.center;
        write!(out, "{} {} {} {} {} {} {}", f.id, k.fx, k.fy, k.cx, k.cy, k.width, k.height).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                write!(out, " {}", r[(i, j)]).unwrap();
            }
        }
        writeln!(out, " {} {} {}", c.x, c.y, c.z).unwrap();
    }
    out
}

pub fn read_camera_file(path: &Path) -> Result<Vec<Frame>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_camera_file(&text)
}

pub fn write_camera_file(path: &Path, frames: &[Frame]) -> Result<()> {
    std::fs::write(path, format_camera_file(frames)).map_err(|e| Error::io(path, e))
}
