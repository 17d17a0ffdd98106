//! Disparity estimation on rectified pairs: census transform, semi-global
//! cost aggregation, left/right consistency, depth conversion and the
//! baseline-relative depth gate.
//!
//! Disparity convention: a left pixel `x` matches right pixel `x - d`; a
//! right-based map stores, for right pixel `x`, the `d` such that the left
//! match is `x + d`.

use image::{GrayImage, RgbImage};
use rayon::prelude::*;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::raster::{Grid, Mask};

pub const CENSUS_ROWS: usize = 5;
pub const CENSUS_COLS: usize = 7;
/// Hamming cost ceiling: one bit per non-center window pixel.
pub const MAX_CENSUS_COST: u8 = (CENSUS_ROWS * CENSUS_COLS - 1) as u8;
/// Disparities at or below this are treated as "no parallax".
pub const MIN_DISPARITY: f64 = 1e-3;
const MAX_P2: u32 = 4000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StereoParams {
    pub max_disparity: u32,
    pub p1: u32,
    pub p2: u32,
    /// 0 disables aggregation; otherwise 4 or 8 scanline directions.
    pub num_paths: u8,
    pub lr_threshold: f64,
    pub uniqueness_ratio: f64,
}

impl Default for StereoParams {
    fn default() -> Self {
        Self { max_disparity: 64, p1: 8, p2: 96, num_paths: 8, lr_threshold: 1.0, uniqueness_ratio: 0.95 }
    }
}

impl StereoParams {
    /// Defaults with the disparity search sized so that depth `2B` (disparity
    /// `fx / 2`) is still representable, capped at 256.
    pub fn for_focal(fx: f64) -> Self {
        Self { max_disparity: default_max_disparity(fx), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_disparity < 1 {
            return Err(Error::invalid("max_disparity must be at least 1"));
        }
        if !(self.p1 > 0 && self.p2 >= self.p1 && self.p2 <= MAX_P2) {
            return Err(Error::invalid(format!(
                "penalties must satisfy 0 < P1 <= P2 <= {MAX_P2}, got P1={} P2={}",
                self.p1, self.p2
            )));
        }
        if ![0, 4, 8].contains(&self.num_paths) {
            return Err(Error::invalid(format!("num_paths must be 0, 4 or 8, got {}", self.num_paths)));
        }
        if !(self.lr_threshold > 0.0) {
            return Err(Error::invalid("lr_threshold must be positive"));
        }
        if !(self.uniqueness_ratio > 0.0 && self.uniqueness_ratio <= 1.0) {
            return Err(Error::invalid("uniqueness_ratio must be in (0, 1]"));
        }
        Ok(())
    }
}

pub fn default_max_disparity(fx: f64) -> u32 {
    ((fx / 2.0).ceil() as u32).clamp(1, 256)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DisparityMap {
    pub values: Grid<f32>,
    pub valid: Mask,
}

impl DisparityMap {
    pub fn width(&self) -> u32 {
        self.values.width
    }

    pub fn height(&self) -> u32 {
        self.values.height
    }

    pub fn mirrored(&self) -> Self {
        Self { values: mirror(&self.values), valid: mirror(&self.valid) }
    }
}

fn mirror<T: Clone>(g: &Grid<T>) -> Grid<T> {
    let mut data = Vec::with_capacity(g.data.len());
    for row in g.rows() {
        data.extend(row.iter().rev().cloned());
    }
    Grid { width: g.width, height: g.height, data }
}

pub fn to_gray(img: &RgbImage) -> GrayImage {
    let mut out = GrayImage::new(img.width(), img.height());
    for (o, p) in out.pixels_mut().zip(img.pixels()) {
        let [r, g, b] = p.0;
        o.0[0] = ((77 * r as u32 + 150 * g as u32 + 29 * b as u32 + 128) >> 8) as u8;
    }
    out
}

/// 5x7 (rows x cols) census descriptors with edge replication. Bit order
/// follows the window in row-major order, skipping the center; a bit is set
/// when the neighbor is darker than the center.
pub fn census_transform(img: &GrayImage) -> Vec<u64> {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let raw = img.as_raw();
    let at = |x: i64, y: i64| raw[(y.clamp(0, h - 1) * w + x.clamp(0, w - 1)) as usize];
    let ry = (CENSUS_ROWS / 2) as i64;
    let rx = (CENSUS_COLS / 2) as i64;
    let mut out = vec![0u64; (w * h) as usize];
    out.par_chunks_mut(w as usize).enumerate().for_each(|(y, row)| {
        let y = y as i64;
        for (x, slot) in row.iter_mut().enumerate() {
            let x = x as i64;
            let center = at(x, y);
            let mut bits = 0u64;
            for dy in -ry..=ry {
                for dx in -rx..=rx {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    bits = (bits << 1) | (at(x + dx, y + dy) < center) as u64;
                }
            }
            *slot = bits;
        }
    });
    out
}

/// Matching cost volume laid out `[y][x][d]`. Disparities that would leave
/// the right image compare against its first column, so they carry no bias
/// into aggregation; they are never selected.
struct CostVolume {
    width: usize,
    height: usize,
    levels: usize,
    data: Vec<u8>,
}

fn compute_costs(left: &[u64], right: &[u64], width: usize, height: usize, levels: usize) -> CostVolume {
    let mut data = vec![0u8; width * height * levels];
    data.par_chunks_mut(width * levels).enumerate().for_each(|(y, row)| {
        let l = &left[y * width..(y + 1) * width];
        let r = &right[y * width..(y + 1) * width];
        for x in 0..width {
            let cell = &mut row[x * levels..(x + 1) * levels];
            for (d, c) in cell.iter_mut().enumerate() {
                *c = (l[x] ^ r[x.saturating_sub(d)]).count_ones() as u8;
            }
        }
    });
    CostVolume { width, height, levels, data }
}

#[inline]
fn path_step(cost: &[u8], prev: &[u16], out: &mut [u16], p1: u32, p2: u32) {
    let min_prev = *prev.iter().min().expect("nonempty") as u32;
    let n = cost.len();
    for d in 0..n {
        let mut v = prev[d] as u32;
        if d > 0 {
            v = v.min(prev[d - 1] as u32 + p1);
        }
        if d + 1 < n {
            v = v.min(prev[d + 1] as u32 + p1);
        }
        v = v.min(min_prev + p2);
        out[d] = (cost[d] as u32 + v - min_prev) as u16;
    }
}

fn add_into(sum: &mut [u16], l: &[u16]) {
    for (s, v) in sum.iter_mut().zip(l) {
        *s += *v;
    }
}

fn aggregate_direction(vol: &CostVolume, dx: isize, dy: isize, p1: u32, p2: u32, sum: &mut [u16]) {
    let (w, h, n) = (vol.width, vol.height, vol.levels);
    if dy == 0 {
        sum.par_chunks_mut(w * n)
            .zip(vol.data.par_chunks(w * n))
            .for_each(|(srow, crow)| {
                let mut prev = vec![0u16; n];
                let mut cur = vec![0u16; n];
                for step in 0..w {
                    let x = if dx > 0 { step } else { w - 1 - step };
                    let c = &crow[x * n..(x + 1) * n];
                    if step == 0 {
                        cur.iter_mut().zip(c).for_each(|(o, &v)| *o = v as u16);
                    } else {
                        path_step(c, &prev, &mut cur, p1, p2);
                    }
                    add_into(&mut srow[x * n..(x + 1) * n], &cur);
                    std::mem::swap(&mut prev, &mut cur);
                }
            });
        return;
    }
    let mut prev_row = vec![0u16; w * n];
    let mut cur_row = vec![0u16; w * n];
    for step in 0..h {
        let y = if dy > 0 { step } else { h - 1 - step };
        let crow = &vol.data[y * w * n..(y + 1) * w * n];
        let srow = &mut sum[y * w * n..(y + 1) * w * n];
        let prev = &prev_row;
        cur_row
            .par_chunks_mut(n)
            .zip(srow.par_chunks_mut(n))
            .enumerate()
            .with_min_len(32)
            .for_each(|(x, (cur, s))| {
                let c = &crow[x * n..(x + 1) * n];
                let px = x as isize - dx;
                if step == 0 || px < 0 || px >= w as isize {
                    cur.iter_mut().zip(c).for_each(|(o, &v)| *o = v as u16);
                } else {
                    path_step(c, &prev[px as usize * n..(px as usize + 1) * n], cur, p1, p2);
                }
                add_into(s, cur);
            });
        std::mem::swap(&mut prev_row, &mut cur_row);
    }
}

const PATHS_4: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
const PATHS_8: [(isize, isize); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, 1), (1, -1), (-1, -1)];

fn aggregate(vol: &CostVolume, params: &StereoParams) -> Vec<u16> {
    let paths: &[(isize, isize)] = match params.num_paths {
        0 => return vol.data.iter().map(|&c| c as u16).collect(),
        4 => &PATHS_4,
        _ => &PATHS_8,
    };
    let mut sum = vec![0u16; vol.data.len()];
    for &(dx, dy) in paths {
        aggregate_direction(vol, dx, dy, params.p1, params.p2, &mut sum);
    }
    sum
}

/// Winner-take-all over the disparities valid at column `x`, lowest
/// disparity on ties, followed by the uniqueness test and parabola
/// refinement. Returns `None` when the minimum is ambiguous.
fn select_disparity(costs: &[u16], uniqueness_ratio: f64) -> Option<f32> {
    let (best, &best_cost) = costs.iter().enumerate().min_by_key(|&(d, c)| (*c, d))?;
    let second = costs
        .iter()
        .enumerate()
        .filter(|(d, _)| d.abs_diff(best) > 1)
        .map(|(_, &c)| c)
        .min()?;
    if best_cost as f64 >= uniqueness_ratio * second as f64 {
        return None;
    }
    let mut disparity = best as f64;
    if best > 0 && best + 1 < costs.len() {
        let c0 = costs[best - 1] as f64;
        let c1 = best_cost as f64;
        let c2 = costs[best + 1] as f64;
        let denom = c0 - 2.0 * c1 + c2;
        if denom > 0.0 {
            disparity += (c0 - c2) / (2.0 * denom);
        }
    }
    Some(disparity as f32)
}

fn match_left_based(left: &GrayImage, right: &GrayImage, params: &StereoParams) -> DisparityMap {
    let (w, h) = (left.width() as usize, left.height() as usize);
    let levels = params.max_disparity as usize + 1;
    let vol = compute_costs(&census_transform(left), &census_transform(right), w, h, levels);
    let agg = aggregate(&vol, params);
    let mut values = vec![0.0f32; w * h];
    let mut valid = vec![false; w * h];
    values
        .par_chunks_mut(w)
        .zip(valid.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (vrow, mrow))| {
            for x in 0..w {
                let base = (y * w + x) * levels;
                let candidates = &agg[base..base + levels.min(x + 1)];
                if let Some(d) = select_disparity(candidates, params.uniqueness_ratio) {
                    vrow[x] = d;
                    mrow[x] = true;
                }
            }
        });
    DisparityMap {
        values: Grid { width: w as u32, height: h as u32, data: values },
        valid: Grid { width: w as u32, height: h as u32, data: valid },
    }
}

fn mirror_image(img: &GrayImage) -> GrayImage {
    image::imageops::flip_horizontal(img)
}

/// Computes the left-based and right-based disparity maps of a rectified
/// pair. The right-based map reuses the left-based matcher on the
/// horizontally mirrored, swapped pair.
pub fn match_sgm(left: &GrayImage, right: &GrayImage, params: &StereoParams) -> Result<(DisparityMap, DisparityMap)> {
    params.validate()?;
    if left.dimensions() != right.dimensions() {
        return Err(Error::DimensionMismatch(format!(
            "left {:?} vs right {:?}",
            left.dimensions(),
            right.dimensions()
        )));
    }
    if params.max_disparity >= left.width() {
        return Err(Error::invalid(format!(
            "max_disparity {} must be below the image width {}",
            params.max_disparity,
            left.width()
        )));
    }
    let left_map = match_left_based(left, right, params);
    let right_map = match_left_based(&mirror_image(right), &mirror_image(left), params).mirrored();
    Ok((left_map, right_map))
}

/// Left/right cross-check. A pixel is occluded when its left disparity does
/// not agree with the right-based disparity at its match, when the match
/// falls outside the image, or when either map is invalid there.
pub fn occlusion_mask(left: &DisparityMap, right: &DisparityMap, lr_threshold: f64) -> Result<Mask> {
    if !left.values.same_shape(&right.values) {
        return Err(Error::DimensionMismatch("left and right disparity maps differ in size".into()));
    }
    let w = left.width() as i64;
    Ok(Grid::from_fn(left.width(), left.height(), |x, y| {
        if !*left.valid.get(x, y) {
            return true;
        }
        let dl = *left.values.get(x, y);
        let xr = x as i64 - dl.round() as i64;
        if xr < 0 || xr >= w || !*right.valid.get(xr as u32, y) {
            return true;
        }
        (dl as f64 - *right.values.get(xr as u32, y) as f64).abs() > lr_threshold
    }))
}

/// Metric depth with the masks that gate it.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthFrame {
    pub depth: Grid<f64>,
    pub valid: Mask,
    pub occlusion_mask: Mask,
    pub range_mask: Mask,
    pub camera: Camera,
    pub baseline: f64,
}

impl DepthFrame {
    /// Depth-only frame: every pixel passes the occlusion and range masks.
    pub fn from_depth(depth: Grid<f64>, valid: Mask, camera: Camera, baseline: f64) -> Self {
        let (w, h) = (depth.width, depth.height);
        Self {
            depth,
            valid,
            occlusion_mask: Grid::filled(w, h, false),
            range_mask: Grid::filled(w, h, true),
            camera,
            baseline,
        }
    }

    /// Exact depth from an oracle render (0 = no hit).
    pub fn from_oracle(depth: &Grid<f32>, camera: Camera, baseline: f64) -> Self {
        let d = Grid { width: depth.width, height: depth.height, data: depth.data.iter().map(|&v| v as f64).collect() };
        let valid = Grid { width: depth.width, height: depth.height, data: depth.data.iter().map(|&v| v > 0.0).collect() };
        Self::from_depth(d, valid, camera, baseline)
    }

    #[inline]
    pub fn is_final_valid(&self, i: usize) -> bool {
        self.valid.data[i] && !self.occlusion_mask.data[i] && self.range_mask.data[i]
    }

    pub fn final_valid(&self) -> Mask {
        Grid {
            width: self.depth.width,
            height: self.depth.height,
            data: (0..self.depth.len()).map(|i| self.is_final_valid(i)).collect(),
        }
    }

    /// Clears validity wherever `keep` is false.
    pub fn restrict(&mut self, keep: &Mask) {
        for (v, k) in self.valid.data.iter_mut().zip(&keep.data) {
            *v &= *k;
        }
    }
}

/// `Z = fx * B / d` for valid disparities above [`MIN_DISPARITY`]; other
/// pixels get depth 0 and are invalid.
pub fn disparity_to_depth(disp: &DisparityMap, fx: f64, baseline: f64) -> Result<(Grid<f64>, Mask)> {
    if !(fx > 0.0 && baseline > 0.0) {
        return Err(Error::invalid("fx and baseline must be positive"));
    }
    let mut depth = Grid::filled(disp.width(), disp.height(), 0.0);
    let mut valid = Grid::filled(disp.width(), disp.height(), false);
    for i in 0..disp.values.len() {
        let d = disp.values.data[i] as f64;
        if disp.valid.data[i] && d > MIN_DISPARITY {
            depth.data[i] = fx * baseline / d;
            valid.data[i] = true;
        }
    }
    Ok((depth, valid))
}

/// Keeps depths in the closed interval `[2B, 10B]`.
pub fn depth_range_mask(depth: &Grid<f64>, baseline: f64) -> Result<Mask> {
    if !(baseline > 0.0) {
        return Err(Error::invalid("baseline must be positive"));
    }
    let (lo, hi) = (2.0 * baseline, 10.0 * baseline);
    Ok(Grid {
        width: depth.width,
        height: depth.height,
        data: depth.data.iter().map(|&z| z >= lo && z <= hi).collect(),
    })
}

/// First-order depth error for a disparity error `eps_d`:
/// `eps_d * Z^2 / (fx * B)`.
pub fn depth_error_bound(z: f64, eps_d: f64, fx: f64, baseline: f64) -> Result<f64> {
    if !(z > 0.0 && eps_d > 0.0 && fx > 0.0 && baseline > 0.0) {
        return Err(Error::invalid("depth error bound needs positive arguments"));
    }
    Ok(eps_d * z * z / (fx * baseline))
}

/// Full per-pair depth extraction: match, cross-check, convert, gate.
pub fn stereo_depth(
    left: &RgbImage,
    right: &RgbImage,
    camera: Camera,
    baseline: f64,
    params: &StereoParams,
) -> Result<(DepthFrame, DisparityMap)> {
    let (dl, dr) = match_sgm(&to_gray(left), &to_gray(right), params)?;
    let occlusion_mask = occlusion_mask(&dl, &dr, params.lr_threshold)?;
    let (depth, valid) = disparity_to_depth(&dl, camera.intrinsics.fx, baseline)?;
    let range_mask = depth_range_mask(&depth, baseline)?;
    Ok((DepthFrame { depth, valid, occlusion_mask, range_mask, camera, baseline }, dl))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_gray(w: u32, h: u32, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::from_fn(w, h, |_, _| image::Luma([rng.random()]))
    }

    /// Box-blurred noise: textured but spatially correlated like a real image.
    fn smooth_gray(w: u32, h: u32, seed: u64) -> GrayImage {
        let raw = random_gray(w + 2, h + 2, seed);
        GrayImage::from_fn(w, h, |x, y| {
            let mut sum = 0u32;
            for dy in 0..3 {
                for dx in 0..3 {
                    sum += raw.get_pixel(x + dx, y + dy).0[0] as u32;
                }
            }
            image::Luma([(sum / 9) as u8])
        })
    }

    fn shifted(img: &GrayImage, shift: u32, seed: u64) -> GrayImage {
        // right(x) = left(x + shift); columns past the edge get fresh noise.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::from_fn(img.width(), img.height(), |x, y| {
            if x + shift < img.width() {
                *img.get_pixel(x + shift, y)
            } else {
                image::Luma([rng.random()])
            }
        })
    }

    #[test]
    fn params_validation() {
        assert!(StereoParams::default().validate().is_ok());
        assert!(StereoParams { p2: 4, p1: 8, ..Default::default() }.validate().is_err());
        assert!(StereoParams { num_paths: 2, ..Default::default() }.validate().is_err());
        assert!(StereoParams { max_disparity: 0, ..Default::default() }.validate().is_err());
        assert_eq!(default_max_disparity(277.1), 139);
        assert_eq!(default_max_disparity(1000.0), 256);
    }

    #[test]
    fn shifted_pair_recovers_shift() {
        let left = smooth_gray(64, 40, 1);
        let right = shifted(&left, 4, 2);
        let params = StereoParams { max_disparity: 16, ..Default::default() };
        let (dl, _) = match_sgm(&left, &right, &params).unwrap();
        // Interior: a full window away from the image border and from the
        // unmatched strip on the right.
        // Parabola fits on census costs lock slightly toward integers, so a
        // handful of pixels may land just past a quarter pixel.
        let (mut total, mut close) = (0, 0);
        for y in 3..37 {
            for x in 20..50 {
                assert!(*dl.valid.get(x, y), "invalid at {x},{y}");
                let d = *dl.values.get(x, y);
                assert_eq!(d.round(), 4.0, "{d} at {x},{y}");
                total += 1;
                close += ((d - 4.0).abs() <= 0.25) as usize;
            }
        }
        assert!(close as f64 >= 0.99 * total as f64, "{close}/{total} within 0.25 px");
    }

    #[test]
    fn textureless_pair_is_rejected() {
        let flat = GrayImage::from_pixel(48, 32, image::Luma([128]));
        let (dl, dr) = match_sgm(&flat, &flat, &StereoParams { max_disparity: 16, ..Default::default() }).unwrap();
        assert_eq!(dl.valid.count(), 0);
        assert_eq!(dr.valid.count(), 0);
    }

    #[test]
    fn input_errors() {
        let a = random_gray(32, 16, 1);
        let b = random_gray(31, 16, 1);
        assert!(matches!(match_sgm(&a, &b, &StereoParams::default()), Err(Error::DimensionMismatch(_))));
        let p = StereoParams { max_disparity: 32, ..Default::default() };
        assert!(match_sgm(&a, &a, &p).is_err());
    }

    #[test]
    fn right_map_is_consistent_with_left_map() {
        let left = random_gray(64, 24, 3);
        let right = shifted(&left, 6, 4);
        let params = StereoParams { max_disparity: 20, ..Default::default() };
        let (dl, dr) = match_sgm(&left, &right, &params).unwrap();
        // Right pixel x sees left pixel x + 6.
        for y in 3..21 {
            for x in 4..50 {
                assert!(*dr.valid.get(x, y));
                assert_eq!(dr.values.get(x, y).round(), 6.0);
            }
        }
        let occ = occlusion_mask(&dl, &dr, 1.0).unwrap();
        for y in 3..21 {
            for x in 26..58 {
                assert!(!*occ.get(x, y));
            }
        }
    }

    /// Straightforward reference: per-path 3-D arrays filled by explicit
    /// recursion, summed, then WTA with the same acceptance rules.
    fn reference_disparity(left: &GrayImage, right: &GrayImage, p: &StereoParams) -> Vec<Option<f32>> {
        let (w, h) = (left.width() as i64, left.height() as i64);
        let n = p.max_disparity as i64 + 1;
        let px = |img: &GrayImage, x: i64, y: i64| img.get_pixel(x.clamp(0, w - 1) as u32, y.clamp(0, h - 1) as u32).0[0];
        let census = |img: &GrayImage, x: i64, y: i64| {
            let mut bits = Vec::new();
            for dy in -2..=2 {
                for dx in -3..=3 {
                    if (dx, dy) != (0, 0) {
                        bits.push(px(img, x + dx, y + dy) < px(img, x, y));
                    }
                }
            }
            bits
        };
        let cost = |x: i64, y: i64, d: i64| -> i64 {
            let a = census(left, x, y);
            let b = census(right, (x - d).max(0), y);
            a.iter().zip(&b).filter(|(u, v)| u != v).count() as i64
        };
        let idx = |x: i64, y: i64, d: i64| ((y * w + x) * n + d) as usize;
        let mut c = vec![0i64; (w * h * n) as usize];
        for y in 0..h {
            for x in 0..w {
                for d in 0..n {
                    c[idx(x, y, d)] = cost(x, y, d);
                }
            }
        }
        let dirs: Vec<(i64, i64)> = match p.num_paths {
            0 => vec![],
            4 => vec![(1, 0), (-1, 0), (0, 1), (0, -1)],
            _ => vec![(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, 1), (1, -1), (-1, -1)],
        };
        let mut total = if dirs.is_empty() { c.clone() } else { vec![0i64; c.len()] };
        for (dx, dy) in dirs {
            let mut l = vec![i64::MIN; c.len()];
            fn fill(
                x: i64, y: i64, dx: i64, dy: i64, w: i64, h: i64, n: i64, p1: i64, p2: i64,
                c: &[i64], l: &mut [i64], idx: &dyn Fn(i64, i64, i64) -> usize,
            ) {
                if l[idx(x, y, 0)] != i64::MIN {
                    return;
                }
                let (qx, qy) = (x - dx, y - dy);
                if qx < 0 || qy < 0 || qx >= w || qy >= h {
                    for d in 0..n {
                        l[idx(x, y, d)] = c[idx(x, y, d)];
                    }
                    return;
                }
                fill(qx, qy, dx, dy, w, h, n, p1, p2, c, l, idx);
                let prev: Vec<i64> = (0..n).map(|d| l[idx(qx, qy, d)]).collect();
                let m = *prev.iter().min().unwrap();
                for d in 0..n {
                    let mut best = prev[d as usize];
                    if d > 0 { best = best.min(prev[d as usize - 1] + p1); }
                    if d + 1 < n { best = best.min(prev[d as usize + 1] + p1); }
                    best = best.min(m + p2);
                    l[idx(x, y, d)] = c[idx(x, y, d)] + best - m;
                }
            }
            for y in 0..h {
                for x in 0..w {
                    fill(x, y, dx, dy, w, h, n, p.p1 as i64, p.p2 as i64, &c, &mut l, &idx);
                }
            }
            for (t, v) in total.iter_mut().zip(&l) {
                *t += v;
            }
        }
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let cands: Vec<i64> = (0..=x.min(n - 1)).map(|d| total[idx(x, y, d)]).collect();
                let mut best = 0;
                for d in 0..cands.len() {
                    if cands[d] < cands[best] {
                        best = d;
                    }
                }
                let second = (0..cands.len()).filter(|&d| d.abs_diff(best) > 1).map(|d| cands[d]).min();
                let accepted = match second {
                    Some(s2) => (cands[best] as f64) < p.uniqueness_ratio * s2 as f64,
                    None => false,
                };
                if !accepted {
                    out.push(None);
                    continue;
                }
                let mut disp = best as f64;
                if best > 0 && best + 1 < cands.len() {
                    let (a, b, e) = (cands[best - 1] as f64, cands[best] as f64, cands[best + 1] as f64);
                    if a - 2.0 * b + e > 0.0 {
                        disp += (a - e) / (2.0 * (a - 2.0 * b + e));
                    }
                }
                out.push(Some(disp as f32));
            }
        }
        out
    }

    #[test]
    fn matches_reference_implementation() {
        for (seed, paths) in [(11u64, 8u8), (12, 4), (13, 0)] {
            let left = random_gray(23, 13, seed);
            let right = shifted(&left, 3, seed + 100);
            let params = StereoParams { max_disparity: 7, num_paths: paths, ..Default::default() };
            let (dl, _) = match_sgm(&left, &right, &params).unwrap();
            let expected = reference_disparity(&left, &right, &params);
            for (i, e) in expected.iter().enumerate() {
                match e {
                    Some(v) => {
                        assert!(dl.valid.data[i], "paths {paths} pixel {i} should be valid");
                        assert_eq!(dl.values.data[i], *v, "paths {paths} pixel {i}");
                    }
                    None => assert!(!dl.valid.data[i], "paths {paths} pixel {i} should be invalid"),
                }
            }
        }
    }

    fn constant_map(w: u32, h: u32, v: f32) -> DisparityMap {
        DisparityMap { values: Grid::filled(w, h, v), valid: Grid::filled(w, h, true) }
    }

    #[test]
    fn occlusion_examples() {
        let c = constant_map(20, 5, 3.0);
        let occ = occlusion_mask(&c, &c, 1.0).unwrap();
        for y in 0..5 {
            for x in 0..20 {
                assert_eq!(*occ.get(x, y), x < 3, "{x}");
            }
        }
        let occ = occlusion_mask(&constant_map(20, 5, 5.0), &constant_map(20, 5, 9.0), 1.0).unwrap();
        assert_eq!(occ.count(), 100);
        let mut invalid = constant_map(20, 5, 0.0);
        invalid.valid.set(7, 2, false);
        let occ = occlusion_mask(&invalid, &constant_map(20, 5, 0.0), 1.0).unwrap();
        assert_eq!(occ.count(), 1);
    }

    #[test]
    fn depth_conversion() {
        let mut disp = constant_map(3, 1, 50.0);
        disp.values.set(1, 0, 0.0);
        disp.valid.set(2, 0, false);
        let (depth, valid) = disparity_to_depth(&disp, 1000.0, 0.1).unwrap();
        assert!((depth.get(0, 0) - 2.0).abs() < 1e-12);
        assert_eq!(valid.data, vec![true, false, false]);
    }

    #[test]
    fn depth_gate_is_closed_interval() {
        let b = 0.1;
        let depth = Grid { width: 5, height: 1, data: vec![0.19, 2.0 * b, 0.5, 10.0 * b, 10.01 * b] };
        let keep = depth_range_mask(&depth, b).unwrap();
        assert_eq!(keep.data, vec![false, true, true, true, false]);
    }

    #[test]
    fn error_bound_is_quadratic_in_depth() {
        assert!((depth_error_bound(1.0, 1.0, 1000.0, 0.1).unwrap() - 0.01).abs() < 1e-15);
        let a = depth_error_bound(1.5, 0.7, 600.0, 0.2).unwrap();
        let b = depth_error_bound(3.0, 0.7, 600.0, 0.2).unwrap();
        assert!((b / a - 4.0).abs() < 1e-12);
        let base = 0.3;
        let near = depth_error_bound(2.0 * base, 1.0, 500.0, base).unwrap();
        let far = depth_error_bound(10.0 * base, 1.0, 500.0, base).unwrap();
        assert!((far / near - 25.0).abs() < 1e-9);
        assert!(depth_error_bound(0.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn depth_strictly_decreases_with_disparity() {
        let disp = DisparityMap {
            values: Grid { width: 50, height: 1, data: (1..=50).map(|d| d as f32 * 0.7).collect() },
            valid: Grid::filled(50, 1, true),
        };
        let (depth, _) = disparity_to_depth(&disp, 400.0, 0.05).unwrap();
        assert!(depth.data.windows(2).all(|w| w[1] < w[0]));
    }
}
