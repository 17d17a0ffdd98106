//! Row-major 2D grids and their on-disk formats: PFM for float maps, 1-bit
//! PNG for masks, 8-bit RGB PNG for images.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use image::RgbImage;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    pub width: u32,
    pub height: u32,
    pub data: Vec<T>,
}

pub type Mask = Grid<bool>;

impl<T: Clone> Grid<T> {
    pub fn filled(width: u32, height: u32, value: T) -> Self {
        Self { width, height, data: vec![value; width as usize * height as usize] }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> T) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }
}

impl<T> Grid<T> {
    #[inline]
    pub fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> &T {
        &self.data[self.index(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: T) {
        let i = self.index(x, y);
        self.data[i] = value;
    }

    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> std::slice::Chunks<'_, T> {
        self.data.chunks(self.width as usize)
    }
}

impl Mask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn none(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn and(&self, other: &Mask) -> Mask {
        debug_assert!(self.same_shape(other));
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a && *b).collect(),
        }
    }

    pub fn iou(&self, other: &Mask) -> f64 {
        let mut inter = 0usize;
        let mut union = 0usize;
        for (a, b) in self.data.iter().zip(&other.data) {
            inter += (*a && *b) as usize;
            union += (*a || *b) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Set pixels in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| ((i as u32) % w, (i as u32) / w))
    }
}

/// Writes a single-channel little-endian PFM (scale -1.0). Rows are stored
/// bottom-to-top as the format requires.
pub fn write_pfm(path: &Path, grid: &Grid<f32>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        write!(w, "Pf\n{} {}\n-1.0\n", grid.width, grid.height)?;
        for row in grid.rows().rev() {
            for v in row {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

pub fn read_pfm(path: &Path) -> Result<Grid<f32>> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    parse_pfm(&bytes)
}

pub fn parse_pfm(bytes: &[u8]) -> Result<Grid<f32>> {
    let bad = |m: &str| Error::format("PFM", m.to_string());
    // Header: three whitespace-terminated tokens after the magic line.
    let mut tokens = Vec::new();
    let mut pos = 0;
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII header"))?);
    }
    // Exactly one whitespace byte separates the header from the data.
    pos += 1;
    let channels = match tokens[0] {
        "Pf" => 1,
        "PF" => 3,
        _ => return Err(bad("bad magic")),
    };
    if channels != 1 {
        return Err(bad("only single-channel PFM is supported"));
    }
    let width: u32 = tokens[1].parse().map_err(|_| bad("bad width"))?;
    let height: u32 = tokens[2].parse().map_err(|_| bad("bad height"))?;
    let scale: f32 = tokens[3].parse().map_err(|_| bad("bad scale"))?;
    let little = scale < 0.0;
    let n = width as usize * height as usize;
    let body = bytes.get(pos..).ok_or_else(|| bad("missing data"))?;
    if body.len() < n * 4 {
        return Err(bad("truncated data"));
    }
    let mut data = vec![0.0f32; n];
    for y in 0..height as usize {
        let src_row = height as usize - 1 - y;
        for x in 0..width as usize {
            let o = (src_row * width as usize + x) * 4;
            let b = [body[o], body[o + 1], body[o + 2], body[o + 3]];
            data[y * width as usize + x] = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        }
    }
    Ok(Grid { width, height, data })
}

/// Writes a 1-bit grayscale PNG (set pixels white).
pub fn write_mask_png(path: &Path, mask: &Mask) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), mask.width, mask.height);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::One);
    let stride = (mask.width as usize).div_ceil(8);
    let mut packed = vec![0u8; stride * mask.height as usize];
    for (y, row) in mask.rows().enumerate() {
        for (x, &b) in row.iter().enumerate() {
            if b {
                packed[y * stride + x / 8] |= 0x80 >> (x % 8);
            }
        }
    }
    let to_err = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
    let mut writer = enc.write_header().map_err(to_err)?;
    writer.write_image_data(&packed).map_err(to_err)?;
    writer.finish().map_err(to_err)
}

/// Reads any grayscale or color PNG as a mask; a pixel is set when its luma
/// is at least half intensity.
pub fn read_mask_png(path: &Path) -> Result<Mask> {
    let img = image::open(path)
        .map_err(|source| Error::Image { path: path.into(), source })?
        .into_luma8();
    Ok(Grid {
        width: img.width(),
        height: img.height(),
        data: img.pixels().map(|p| p.0[0] >= 128).collect(),
    })
}

pub fn write_rgb_png(path: &Path, img: &RgbImage) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image { path: path.into(), source })
}

pub fn read_rgb_png(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)
        .map_err(|source| Error::Image { path: path.into(), source })?
        .into_rgb8())
}
