//! Single-channel float planes and separable filtering shared by the
//! feature detector, edge detector and degradation simulator.

use crate::raster::Raster;

#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn new(width: usize, height: usize) -> Self {
        Plane { width, height, data: vec![0.0; width * height] }
    }

    /// Luminance plane of `img` (channel 0 for gray rasters).
    pub fn from_raster(img: &Raster) -> Self {
        let g = img.to_grayscale();
        Plane { width: g.width(), height: g.height(), data: g.samples().iter().map(|&v| v as f32).collect() }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Value at `(x, y)` with coordinates clamped into the plane.
    #[inline]
    pub fn clamped(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.data[y * self.width + x]
    }

    /// Keeps every second pixel starting at `(0, 0)`.
    pub fn decimate(&self) -> Plane {
        let w = self.width.div_ceil(2);
        let h = self.height.div_ceil(2);
        let mut out = Plane::new(w, h);
        for y in 0..h {
            for x in 0..w {
                out.data[y * w + x] = self.at(2 * x, 2 * y);
            }
        }
        out
    }
}

/// Normalized 1-D Gaussian with radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k.into_iter().map(|v| v as f32).collect()
}

/// Separable convolution with a symmetric odd-length kernel and clamped borders.
pub fn convolve_separable(src: &Plane, kernel: &[f32]) -> Plane {
    let r = (kernel.len() / 2) as isize;
    let (w, h) = (src.width, src.height);
    let mut tmp = Plane::new(w, h);
    for y in 0..h {
        let row = &src.data[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0f32;
            for (k, &kv) in kernel.iter().enumerate() {
                let sx = (x as isize + k as isize - r).clamp(0, w as isize - 1) as usize;
                acc += kv * row[sx];
            }
            tmp.data[y * w + x] = acc;
        }
    }
    let mut out = Plane::new(w, h);
    for y in 0..h {
        for (k, &kv) in kernel.iter().enumerate() {
            let sy = (y as isize + k as isize - r).clamp(0, h as isize - 1) as usize;
            let src_row = &tmp.data[sy * w..(sy + 1) * w];
            let dst_row = &mut out.data[y * w..(y + 1) * w];
            for (d, s) in dst_row.iter_mut().zip(src_row) {
                *d += kv * s;
            }
        }
    }
    out
}

pub fn gaussian_blur(src: &Plane, sigma: f64) -> Plane {
    if sigma <= 0.0 {
        return src.clone();
    }
    convolve_separable(src, &gaussian_kernel(sigma))
}

/// Gaussian blur applied independently to each raster channel.
pub fn blur_raster(img: &Raster, sigma: f64) -> Raster {
    if sigma <= 0.0 {
        return img.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let c = img.channels();
    let planes: Vec<Plane> = (0..c)
        .map(|ch| {
            let p = Plane { width: img.width(), height: img.height(), data: img.channel(ch).samples().iter().map(|&v| v as f32).collect() };
            convolve_separable(&p, &kernel)
        })
        .collect();
    let mut data = vec![0f64; img.samples().len()];
    for (ch, p) in planes.iter().enumerate() {
        for (i, v) in p.data.iter().enumerate() {
            data[i * c + ch] = (*v as f64).clamp(0.0, 1.0);
        }
    }
    Raster::from_raw(img.width(), img.height(), c, data)
}
