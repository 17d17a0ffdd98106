//! Dense projective TSDF volume.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use image::RgbImage;
use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::stereo::{depth_error_bound, DepthFrame};

pub const DEFAULT_MAX_WEIGHT: f32 = 128.0;

#[derive(Clone, Debug, PartialEq)]
pub struct TsdfVolume {
    pub origin: Vector3<f64>,
    pub voxel_size: f64,
    pub dims: [usize; 3],
    pub truncation: f64,
    pub max_weight: f32,
    /// Signed distance over truncation, in [-1, 1]; 1 where unobserved.
    pub tsdf: Vec<f64>,
    pub weight: Vec<f32>,
    /// Running mean color, 0..=255 per channel.
    pub color: Vec<[f64; 3]>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IntegrateStats {
    pub updated: usize,
}

impl TsdfVolume {
    pub fn new(origin: Vector3<f64>, voxel_size: f64, dims: [usize; 3], truncation: f64) -> Result<Self> {
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(Error::invalid("voxel_size must be positive"));
        }
        if !(truncation >= 2.0 * voxel_size) {
            return Err(Error::invalid(format!(
                "truncation {truncation} must be at least twice the voxel size {voxel_size}"
            )));
        }
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::invalid(format!("volume dims {dims:?} must be at least 2 per axis")));
        }
        if !origin.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("volume origin must be finite"));
        }
        let n = dims[0]
            .checked_mul(dims[1])
            .and_then(|v| v.checked_mul(dims[2]))
            .filter(|&n| n <= 1 << 28)
            .ok_or_else(|| Error::invalid(format!("volume dims {dims:?} are too large")))?;
        Ok(Self {
            origin,
            voxel_size,
            dims,
            truncation,
            max_weight: DEFAULT_MAX_WEIGHT,
            tsdf: vec![1.0; n],
            weight: vec![0.0; n],
            color: vec![[0.0; 3]; n],
        })
    }

    /// Volume covering `[min, max]` with lattice spacing `voxel_size`.
    pub fn covering(min: Vector3<f64>, max: Vector3<f64>, voxel_size: f64, truncation: f64) -> Result<Self> {
        let mut dims = [0usize; 3];
        for a in 0..3 {
            let extent = max[a] - min[a];
            if !(extent >= 0.0 && extent.is_finite()) {
                return Err(Error::invalid("volume bounds are empty or non-finite"));
            }
            dims[a] = ((extent / voxel_size - 1e-9).ceil().max(0.0) as usize + 1).max(2);
        }
        Self::new(min, voxel_size, dims, truncation)
    }

    pub fn len(&self) -> usize {
        self.tsdf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tsdf.is_empty()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn point(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        self.origin + Vector3::new(i as f64, j as f64, k as f64) * self.voxel_size
    }

    /// Fuses one frame. Only final-valid pixels contribute; depth is sampled
    /// at the nearest pixel. `rgb`, when given, must match the frame size.
    pub fn integrate(&mut self, frame: &DepthFrame, rgb: Option<&RgbImage>) -> Result<IntegrateStats> {
        let intr = frame.camera.intrinsics;
        if frame.depth.width != intr.width || frame.depth.height != intr.height {
            return Err(Error::DimensionMismatch("depth frame does not match its intrinsics".into()));
        }
        if let Some(img) = rgb {
            if img.dimensions() != (intr.width, intr.height) {
                return Err(Error::DimensionMismatch("color image does not match depth frame".into()));
            }
        }
        let final_valid = frame.final_valid();
        let rot_t = frame.camera.pose.rotation.transpose();
        let center = frame.camera.pose.center;
        let [nx, ny, _] = self.dims;
        let (origin, voxel, trunc, max_w) = (self.origin, self.voxel_size, self.truncation, self.max_weight);
        let slab = nx * ny;
        let updated: usize = self
            .tsdf
            .par_chunks_mut(slab)
            .zip(self.weight.par_chunks_mut(slab))
            .zip(self.color.par_chunks_mut(slab))
            .enumerate()
            .map(|(k, ((tsdf, weight), color))| {
                let mut count = 0;
                for j in 0..ny {
                    for i in 0..nx {
                        let p = origin + Vector3::new(i as f64, j as f64, k as f64) * voxel;
                        let q = rot_t * (p - center);
                        if q.z <= 0.0 {
                            continue;
                        }
                        let u = (intr.fx * q.x / q.z + intr.cx).round();
                        let v = (intr.fy * q.y / q.z + intr.cy).round();
                        if !(u >= 0.0 && v >= 0.0 && u < intr.width as f64 && v < intr.height as f64) {
                            continue;
                        }
                        let (u, v) = (u as u32, v as u32);
                        let pix = (v * intr.width + u) as usize;
                        if !final_valid.data[pix] {
                            continue;
                        }
                        let sdf = frame.depth.data[pix] - q.z;
                        if sdf < -trunc {
                            continue;
                        }
                        let obs = (sdf / trunc).clamp(-1.0, 1.0);
                        let idx = i + nx * j;
                        let w = weight[idx] as f64;
                        tsdf[idx] = (tsdf[idx] * w + obs) / (w + 1.0);
                        if let Some(img) = rgb {
                            let px = img.get_pixel(u, v).0;
                            for c in 0..3 {
                                color[idx][c] = (color[idx][c] * w + px[c] as f64) / (w + 1.0);
                            }
                        }
                        weight[idx] = (weight[idx] + 1.0).min(max_w);
                        count += 1;
                    }
                }
                count
            })
            .sum();
        Ok(IntegrateStats { updated })
    }

    /// Writes a text header at `path` and the raw arrays next to it with a
    /// `.bin` extension: tsdf (f64), weight (f32), color (3 x f64), all
    /// little-endian in lattice order.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let bin = checkpoint_data_path(path);
        let header = format!(
            "tsdf_volume 1\norigin {} {} {}\nvoxel_size {}\ndims {} {} {}\ntruncation {}\nmax_weight {}\ndata {}\n",
            self.origin.x,
            self.origin.y,
            self.origin.z,
            self.voxel_size,
            self.dims[0],
            self.dims[1],
            self.dims[2],
            self.truncation,
            self.max_weight,
            bin.file_name().and_then(|s| s.to_str()).unwrap_or_default()
        );
        std::fs::write(path, header).map_err(|e| Error::io(path, e))?;
        let mut buf = Vec::with_capacity(self.len() * 36);
        self.tsdf.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
        self.weight.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
        self.color.iter().flatten().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
        let mut f = std::fs::File::create(&bin).map_err(|e| Error::io(&bin, e))?;
        f.write_all(&buf).map_err(|e| Error::io(&bin, e))
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let bad = |m: &str| Error::format("TSDF checkpoint", format!("{}: {m}", path.display()));
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut origin = None;
        let mut voxel = None;
        let mut dims = None;
        let mut trunc = None;
        let mut max_weight = DEFAULT_MAX_WEIGHT;
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
        for line in text.lines() {
            let t: Vec<&str> = line.split_whitespace().collect();
            match t.as_slice() {
                ["origin", x, y, z] => origin = Some(Vector3::new(num(x)?, num(y)?, num(z)?)),
                ["voxel_size", v] => voxel = Some(num(v)?),
                ["dims", a, b, c] => {
                    dims = Some([num(a)? as usize, num(b)? as usize, num(c)? as usize]);
                }
                ["truncation", v] => trunc = Some(num(v)?),
                ["max_weight", v] => max_weight = num(v)? as f32,
                _ => {}
            }
        }
        let mut vol = Self::new(
            origin.ok_or_else(|| bad("missing origin"))?,
            voxel.ok_or_else(|| bad("missing voxel_size"))?,
            dims.ok_or_else(|| bad("missing dims"))?,
            trunc.ok_or_else(|| bad("missing truncation"))?,
        )?;
        vol.max_weight = max_weight;
        let bin = checkpoint_data_path(path);
        let data = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        let n = vol.len();
        if data.len() != n * 36 {
            return Err(bad("data file size does not match dims"));
        }
        let (t, rest) = data.split_at(n * 8);
        let (w, c) = rest.split_at(n * 4);
        for (dst, b) in vol.tsdf.iter_mut().zip(t.chunks_exact(8)) {
            *dst = f64::from_le_bytes(b.try_into().unwrap());
        }
        for (dst, b) in vol.weight.iter_mut().zip(w.chunks_exact(4)) {
            *dst = f32::from_le_bytes(b.try_into().unwrap());
        }
        for (dst, b) in vol.color.iter_mut().flatten().zip(c.chunks_exact(8)) {
            *dst = f64::from_le_bytes(b.try_into().unwrap());
        }
        Ok(vol)
    }
}

fn checkpoint_data_path(header: &Path) -> PathBuf {
    header.with_extension("bin")
}

/// `max(4 * voxel, eps(10B))` with the disparity error taken as the
/// left/right threshold, so noise at the far gate stays inside the band.
pub fn auto_truncation(voxel_size: f64, lr_threshold: f64, fx: f64, baseline: f64) -> Result<f64> {
    Ok((4.0 * voxel_size).max(depth_error_bound(10.0 * baseline, lr_threshold, fx, baseline)?))
}

/// Axis-aligned box of all final-valid depth samples in world coordinates.
pub fn depth_bounds<'a>(frames: impl IntoIterator<Item = &'a DepthFrame>) -> Option<(Vector3<f64>, Vector3<f64>)> {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    let mut any = false;
    for f in frames {
        let intr = f.camera.intrinsics;
        for v in 0..f.depth.height {
            for u in 0..f.depth.width {
                let i = f.depth.index(u, v);
                if !f.is_final_valid(i) {
                    continue;
                }
                let z = f.depth.data[i];
                let q = Vector3::new((u as f64 - intr.cx) * z / intr.fx, (v as f64 - intr.cy) * z / intr.fy, z);
                let p = f.camera.pose.camera_to_world(&q);
                lo = lo.inf(&p);
                hi = hi.sup(&p);
                any = true;
            }
        }
    }
    any.then_some((lo, hi))
}

/// Voxel size for which the padded box (`extent + 4 * truncation` along its
/// longest axis) spans `resolution` lattice points, with truncation chosen by
/// [`auto_truncation`]. Returns `(voxel_size, truncation)`.
pub fn voxel_for_resolution(extent: f64, resolution: usize, min_truncation: f64) -> Result<(f64, f64)> {
    if resolution < 24 {
        return Err(Error::invalid("volume resolution must be at least 24"));
    }
    if !(extent > 0.0) {
        return Err(Error::invalid("depth samples span an empty box"));
    }
    let span = (resolution - 1) as f64;
    // Truncation is either 4 voxels or the error bound; the fixed point of
    // v = (extent + 4 * trunc(v)) / span lies in exactly one regime.
    let v = extent / (span - 16.0);
    if 4.0 * v >= min_truncation {
        return Ok((v, 4.0 * v));
    }
    let v = (extent + 4.0 * min_truncation) / span;
    Ok((v, min_truncation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{Camera, Intrinsics, Pose};
    use crate::raster::Grid;

    fn plane_frame(z: f64) -> DepthFrame {
        let intr = Intrinsics::new(50.0, 50.0, 20.0, 15.0, 41, 31).unwrap();
        let cam = Camera::new(intr, Pose::identity());
        DepthFrame::from_depth(Grid::filled(41, 31, z), Grid::filled(41, 31, true), cam, 0.5)
    }

    fn column_volume() -> TsdfVolume {
        // A thin column of voxels along the optical axis, z from 4 to 6.
        TsdfVolume::new(Vector3::new(-0.05, -0.05, 4.0), 0.05, [3, 3, 41], 0.2).unwrap()
    }

    fn crossing_z(vol: &TsdfVolume) -> f64 {
        let col: Vec<f64> = (0..vol.dims[2]).map(|k| vol.tsdf[vol.index(1, 1, k)]).collect();
        let k = col.windows(2).position(|w| w[0] > 0.0 && w[1] <= 0.0).expect("crossing");
        let t = col[k] / (col[k] - col[k + 1]);
        vol.origin.z + (k as f64 + t) * vol.voxel_size
    }

    #[test]
    fn frontal_plane_crosses_at_depth() {
        let mut vol = column_volume();
        vol.integrate(&plane_frame(5.0), None).unwrap();
        let z = crossing_z(&vol);
        assert!((z - 5.0).abs() < 1e-9, "{z}");
        assert!(vol.tsdf[vol.index(1, 1, 0)] > 0.0);
    }

    #[test]
    fn integrating_twice_doubles_weight_only() {
        let mut once = column_volume();
        once.integrate(&plane_frame(5.0), None).unwrap();
        let mut twice = once.clone();
        twice.integrate(&plane_frame(5.0), None).unwrap();
        for i in 0..once.len() {
            assert!((once.tsdf[i] - twice.tsdf[i]).abs() < 1e-15);
            assert_eq!(twice.weight[i], 2.0 * once.weight[i]);
        }
    }

    #[test]
    fn two_depths_average_to_midpoint() {
        let mut vol = column_volume();
        vol.integrate(&plane_frame(5.0), None).unwrap();
        vol.integrate(&plane_frame(5.2), None).unwrap();
        let z = crossing_z(&vol);
        assert!((z - 5.1).abs() <= vol.voxel_size / 2.0, "{z}");
    }

    #[test]
    fn voxels_far_behind_the_surface_are_untouched() {
        let mut vol = column_volume();
        vol.integrate(&plane_frame(4.5), None).unwrap();
        let k_behind = ((4.5 + 0.2 - 4.0) / 0.05) as usize + 2;
        assert_eq!(vol.weight[vol.index(1, 1, k_behind)], 0.0);
        assert_eq!(vol.weight[vol.index(1, 1, 0)], 1.0);
    }

    #[test]
    fn weight_is_capped() {
        let mut vol = column_volume();
        vol.max_weight = 3.0;
        for _ in 0..5 {
            vol.integrate(&plane_frame(5.0), None).unwrap();
        }
        assert!(vol.weight.iter().all(|&w| w <= 3.0));
    }

    #[test]
    fn frame_missing_volume_is_a_no_op() {
        let mut vol = TsdfVolume::new(Vector3::new(10.0, 10.0, -5.0), 0.1, [4, 4, 4], 0.4).unwrap();
        let before = vol.clone();
        let stats = vol.integrate(&plane_frame(5.0), None).unwrap();
        assert_eq!(stats.updated, 0);
        assert_eq!(vol, before);
    }

    #[test]
    fn color_is_averaged() {
        let mut vol = column_volume();
        let red = RgbImage::from_pixel(41, 31, image::Rgb([200, 0, 0]));
        let blue = RgbImage::from_pixel(41, 31, image::Rgb([0, 0, 100]));
        vol.integrate(&plane_frame(5.0), Some(&red)).unwrap();
        vol.integrate(&plane_frame(5.0), Some(&blue)).unwrap();
        let c = vol.color[vol.index(1, 1, 20)];
        assert_eq!(c, [100.0, 0.0, 50.0]);
    }

    #[test]
    fn rejects_thin_truncation() {
        assert!(TsdfVolume::new(Vector3::zeros(), 0.1, [4, 4, 4], 0.1).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut vol = column_volume();
        vol.integrate(&plane_frame(5.0), None).unwrap();
        let path = dir.path().join("volume.txt");
        vol.save_checkpoint(&path).unwrap();
        assert!(dir.path().join("volume.bin").exists());
        assert_eq!(TsdfVolume::load_checkpoint(&path).unwrap(), vol);
    }

    #[test]
    fn resolution_picks_consistent_voxel() {
        let (v, t) = voxel_for_resolution(2.2, 128, 0.06).unwrap();
        assert!((4.0 * v - t).abs() < 1e-15);
        assert!(((2.2 + 4.0 * t) / v - 127.0).abs() < 1e-9);
        let (v, t) = voxel_for_resolution(1.0, 128, 0.5).unwrap();
        assert_eq!(t, 0.5);
        assert!(4.0 * v < t);
        assert!(((1.0 + 4.0 * t) / v - 127.0).abs() < 1e-9);
    }

    #[test]
    fn auto_truncation_uses_far_gate_bound() {
        // eps(10B) = 100 B / fx
        assert_eq!(auto_truncation(0.001, 1.0, 100.0, 0.5).unwrap(), 0.5);
        assert_eq!(auto_truncation(0.2, 1.0, 100.0, 0.1).unwrap(), 0.8);
    }
}
