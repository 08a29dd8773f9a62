//! Image container and low-level pixel operations.
//!
//! A [`Raster`] stores row-major, interleaved `f64` samples in `[0, 1]`.
//! Three-channel rasters hold sRGB-encoded values; no operation here
//! linearizes them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width and height in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Size {
    pub width: usize,
    pub height: usize,
}

impl Size {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::param(format!("size must be at least 1x1, got {width}x{height}")));
        }
        Ok(Size { width, height })
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }
}

impl std::fmt::Display for Size {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

/// Round half up, tolerant to the representation error of decimal fractions
/// such as `0.95`.
pub fn round_half_up(v: f64) -> usize {
    (v + 0.5 + 1e-9).floor().max(0.0) as usize
}

/// One of the four lossless rotations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rotation {
    R0,
    R90,
    R180,
    R270,
}

impl Rotation {
    pub const ALL: [Rotation; 4] = [Rotation::R0, Rotation::R90, Rotation::R180, Rotation::R270];

    pub fn from_degrees(deg: u32) -> Result<Self> {
        match deg {
            0 => Ok(Rotation::R0),
            90 => Ok(Rotation::R90),
            180 => Ok(Rotation::R180),
            270 => Ok(Rotation::R270),
            other => Err(Error::param(format!(
                "rotation must be one of 0, 90, 180, 270 degrees, got {other}"
            ))),
        }
    }

    pub fn degrees(self) -> u32 {
        match self {
            Rotation::R0 => 0,
            Rotation::R90 => 90,
            Rotation::R180 => 180,
            Rotation::R270 => 270,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Raster {
    /// Wraps `data`, clamping every sample into `[0, 1]`.
    ///
    /// Fails when the buffer length does not match the geometry, when the
    /// channel count is not 1 or 3, or when a sample is not finite.
    pub fn from_vec(width: usize, height: usize, channels: usize, mut data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::input(format!("empty raster {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::input(format!("unsupported channel count {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::input(format!(
                "sample buffer has {} values, expected {}x{}x{} = {}",
                data.len(),
                width,
                height,
                channels,
                width * height * channels
            )));
        }
        for v in data.iter_mut() {
            if !v.is_finite() {
                return Err(Error::input("non-finite sample"));
            }
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Raster { width, height, channels, data })
    }

    /// Constructs from a buffer the caller guarantees is valid and clamped.
    pub(crate) fn from_raw(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height * channels);
        debug_assert!(data.iter().all(|v| (0.0..=1.0).contains(v)));
        Raster { width, height, channels, data }
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::from_vec(width, height, channels, vec![value; width * height * channels])
    }

    /// Builds a raster by evaluating `f(x, y, channel)` for every sample.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::from_vec(width, height, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn size(&self) -> Size {
        Size { width: self.width, height: self.height }
    }

    pub fn samples(&self) -> &[f64] {
        &self.data
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Extracts channel `c` as a single-channel raster.
    pub fn channel(&self, c: usize) -> Raster {
        assert!(c < self.channels, "channel {c} out of range");
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        Raster::from_raw(self.width, self.height, 1, data)
    }

    /// Applies `f` to every sample; results are clamped into `[0, 1]`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Raster {
        let data = self.data.iter().map(|&v| f(v).clamp(0.0, 1.0)).collect();
        Raster::from_raw(self.width, self.height, self.channels, data)
    }

    /// Snaps every sample onto the 8-bit grid `k / 255`.
    pub fn quantized(&self) -> Raster {
        let data = self.data.iter().map(|&v| f64::from(to_u8(v)) / 255.0).collect();
        Raster::from_raw(self.width, self.height, self.channels, data)
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| to_u8(v)).collect()
    }

    pub fn from_u8(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        let data = bytes.iter().map(|&b| f64::from(b) / 255.0).collect();
        Self::from_vec(width, height, channels, data)
    }

    /// Copies the `w`x`h` region whose top-left corner is `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<Raster> {
        if w == 0 || h == 0 || x + w > self.width || y + h > self.height {
            return Err(Error::param(format!(
                "crop {w}x{h} at ({x},{y}) outside {}x{} raster",
                self.width, self.height
            )));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(w * h * c);
        for row in y..y + h {
            let start = (row * self.width + x) * c;
            data.extend_from_slice(&self.data[start..start + w * c]);
        }
        Ok(Raster::from_raw(w, h, c, data))
    }

    /// Centered crop keeping `round(dim * p)` pixels per axis.
    pub fn center_crop_percent(&self, p: f64) -> Result<Raster> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::param(format!("crop fraction must lie in (0, 1], got {p}")));
        }
        let w = round_half_up(self.width as f64 * p).clamp(1, self.width);
        let h = round_half_up(self.height as f64 * p).clamp(1, self.height);
        self.center_crop_to(Size { width: w, height: h })
    }

    /// Centered crop of exactly `target`; odd remainders go to the right and bottom.
    pub fn center_crop_to(&self, target: Size) -> Result<Raster> {
        if target.width > self.width || target.height > self.height {
            return Err(Error::param(format!(
                "crop target {target} larger than source {}",
                self.size()
            )));
        }
        let x = (self.width - target.width) / 2;
        let y = (self.height - target.height) / 2;
        self.crop(x, y, target.width, target.height)
    }

    /// Largest centered sub-rectangle with aspect `ratio_w:ratio_h`.
    pub fn crop_to_aspect(&self, ratio_w: usize, ratio_h: usize) -> Result<Raster> {
        if ratio_w == 0 || ratio_h == 0 {
            return Err(Error::param("aspect ratio terms must be at least 1"));
        }
        let (w, h) = (self.width, self.height);
        let target = if w * ratio_h > h * ratio_w {
            Size { width: (h * ratio_w / ratio_h).max(1), height: h }
        } else {
            Size { width: w, height: (w * ratio_h / ratio_w).max(1) }
        };
        self.center_crop_to(target)
    }

    /// Bicubic (Catmull-Rom, `a = -0.5`) resampling with clamped edges.
    ///
    /// When shrinking, the kernel is stretched by the scale factor so the
    /// result is low-pass filtered instead of aliased.
    pub fn resize_bicubic(&self, target: Size) -> Raster {
        if target == self.size() {
            return self.clone();
        }
        let horiz = ResampleWeights::new(self.width, target.width);
        let vert = ResampleWeights::new(self.height, target.height);
        let c = self.channels;

        // horizontal pass into f64 scratch
        let mut tmp = vec![0f64; target.width * self.height * c];
        for y in 0..self.height {
            let src_row = &self.data[y * self.width * c..(y + 1) * self.width * c];
            let dst_row = &mut tmp[y * target.width * c..(y + 1) * target.width * c];
            for (ox, taps) in horiz.taps.iter().enumerate() {
                for &(sx, w) in taps {
                    for ch in 0..c {
                        dst_row[ox * c + ch] += w * src_row[sx * c + ch];
                    }
                }
            }
        }

        let mut out = vec![0f64; target.width * target.height * c];
        let row_len = target.width * c;
        for (oy, taps) in vert.taps.iter().enumerate() {
            let dst = &mut out[oy * row_len..(oy + 1) * row_len];
            let mut acc = vec![0f64; row_len];
            for &(sy, w) in taps {
                let src = &tmp[sy * row_len..(sy + 1) * row_len];
                for (a, s) in acc.iter_mut().zip(src) {
                    *a += w * s;
                }
            }
            for (d, a) in dst.iter_mut().zip(acc) {
                *d = a.clamp(0.0, 1.0);
            }
        }
        Raster::from_raw(target.width, target.height, c, out)
    }

    /// Rotates portrait images 90 degrees clockwise; landscape and square
    /// images are returned unchanged.
    pub fn orient_landscape(&self) -> Raster {
        if self.height > self.width {
            self.transformed(false, false, Rotation::R90)
        } else {
            self.clone()
        }
    }

    /// Flips (horizontal, then vertical) followed by a clockwise rotation
    /// given in degrees.
    pub fn flip_rotate(&self, flip_h: bool, flip_v: bool, rot_degrees: u32) -> Result<Raster> {
        let rot = Rotation::from_degrees(rot_degrees)?;
        Ok(self.transformed(flip_h, flip_v, rot))
    }

    pub fn transformed(&self, flip_h: bool, flip_v: bool, rot: Rotation) -> Raster {
        let (w, h, c) = (self.width, self.height, self.channels);
        let (ow, oh) = match rot {
            Rotation::R0 | Rotation::R180 => (w, h),
            Rotation::R90 | Rotation::R270 => (h, w),
        };
        let mut out = Vec::with_capacity(self.data.len());
        for oy in 0..oh {
            for ox in 0..ow {
                // position in the flipped (pre-rotation) image
                let (fx, fy) = match rot {
                    Rotation::R0 => (ox, oy),
                    Rotation::R90 => (oy, h - 1 - ox),
                    Rotation::R180 => (w - 1 - ox, h - 1 - oy),
                    Rotation::R270 => (w - 1 - oy, ox),
                };
                let sx = if flip_h { w - 1 - fx } else { fx };
                let sy = if flip_v { h - 1 - fy } else { fy };
                let i = (sy * w + sx) * c;
                out.extend_from_slice(&self.data[i..i + c]);
            }
        }
        Raster::from_raw(ow, oh, c, out)
    }

    /// BT.601 luma. Single-channel input passes through unchanged.
    pub fn to_grayscale(&self) -> Raster {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).clamp(0.0, 1.0))
            .collect();
        Raster::from_raw(self.width, self.height, 1, data)
    }

    /// Expands a single-channel raster to three identical channels.
    pub fn to_rgb(&self) -> Raster {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Raster::from_raw(self.width, self.height, 3, data)
    }
}

#[inline]
fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn catmull_rom(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

struct ResampleWeights {
    taps: Vec<Vec<(usize, f64)>>,
}

impl ResampleWeights {
    fn new(src: usize, dst: usize) -> Self {
        let scale = src as f64 / dst as f64;
        let stretch = scale.max(1.0);
        let support = 2.0 * stretch;
        let taps = (0..dst)
            .map(|o| {
                let center = (o as f64 + 0.5) * scale - 0.5;
                let lo = (center - support).floor() as isize;
                let hi = (center + support).ceil() as isize;
                let mut row: Vec<(usize, f64)> = Vec::new();
                let mut sum = 0.0;
                for i in lo..=hi {
                    let w = catmull_rom((i as f64 - center) / stretch);
                    if w == 0.0 {
                        continue;
                    }
                    let idx = i.clamp(0, src as isize - 1) as usize;
                    sum += w;
                    match row.iter_mut().find(|(j, _)| *j == idx) {
                        Some(entry) => entry.1 += w,
                        None => row.push((idx, w)),
                    }
                }
                for t in row.iter_mut() {
                    t.1 /= sum;
                }
                row
            })
            .collect();
        ResampleWeights { taps }
    }
}
